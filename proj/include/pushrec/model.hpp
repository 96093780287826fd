#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pushrec/common.hpp"

namespace pushrec {

enum class Plane { Sagittal, Frontal };
enum class ContactLabel { Heel, Toe };

std::string to_string(Plane plane);
Plane plane_from_string(const std::string& name);

/// One rigid body of the planar tree.  The link frame origin sits at the
/// proximal joint; `axis` is the unit direction of the link in its own frame
/// and the centre of mass lies at `axis * com_offset`.
struct LinkSpec {
  std::string name;
  double mass = 0.0;     // kg
  double inertia = 0.0;  // kg m^2 about own CoM
  double length = 0.0;   // m
  double com_offset = 0.0;
  Vec2 axis{0.0, -1.0};
  int parent = -1;  // -1 for the base link

  Vec2 com_local() const { return axis * com_offset; }
};

struct PdGains {
  double kp = 0.0;  // N m / rad
  double kd = 0.0;  // N m s / rad
};

struct JointSpec {
  std::string name;
  int parent_link = -1;
  int child_link = -1;
  Vec2 origin{0.0, 0.0};  // joint location in the parent link frame
  std::array<double, 2> angle_limits{0.0, 0.0};
  double velocity_limit = 0.0;
  double torque_limit = 0.0;
  PdGains pd_gains;
  double nominal_angle = 0.0;
};

struct ContactPointSpec {
  int link = -1;
  Vec2 offset{0.0, 0.0};
  ContactLabel label = ContactLabel::Heel;
};

/// Planar articulated robot.  Generalized coordinates are
/// (base x, base z, base angle, joint angles...) for a floating base and the
/// joint angles alone otherwise.  Immutable once validated.
struct ModelSpec {
  std::vector<LinkSpec> links;
  std::vector<JointSpec> joints;
  std::vector<ContactPointSpec> contacts;
  double gravity = 9.81;
  int base_link = 0;
  int torso_link = 0;
  std::array<int, 2> foot_links{-1, -1};  // left, right
  Plane plane = Plane::Sagittal;
  bool floating_base = true;

  int base_dof() const { return floating_base ? 3 : 0; }
  int dof() const { return base_dof() + static_cast<int>(joints.size()); }
  int joint_count() const { return static_cast<int>(joints.size()); }
  double total_mass() const;
  /// Index of the joint whose child is `link`, or -1 for the base.
  int parent_joint(int link) const;
  /// Contact indices belonging to a foot link.
  std::vector<int> foot_contacts(int side) const;
};

/// Throws ModelError naming the first violated invariant.
void validate(const ModelSpec& model);

/// Links ordered so that every parent precedes its children (depth first).
std::vector<int> traversal_order(const ModelSpec& model);

ModelSpec builtin_model(Plane variant);

nlohmann::json to_json(const ModelSpec& model);
/// Parses and validates; throws ModelError on schema or invariant violation.
ModelSpec model_from_json(const nlohmann::json& j);
ModelSpec load_model(const std::filesystem::path& path);
void save_model(const ModelSpec& model, const std::filesystem::path& path);

struct SupportInterval {
  double lo = 0.0;
  double hi = 0.0;
  double center() const { return 0.5 * (lo + hi); }
  double width() const { return hi - lo; }
};

struct ContactSample {
  bool active = false;
  double x = 0.0;  // world horizontal coordinate
};

/// Smallest interval containing every active contact; nullopt in flight.
std::optional<SupportInterval> support_interval(const std::vector<ContactSample>& contacts);

}  // namespace pushrec
