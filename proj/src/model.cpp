#include "pushrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pushrec/builtin_constants.hpp"

namespace pushrec {

using nlohmann::json;

std::string to_string(Plane plane) { return plane == Plane::Sagittal ? "sagittal" : "frontal"; }

Plane plane_from_string(const std::string& name) {
  if (name == "sagittal") return Plane::Sagittal;
  if (name == "frontal") return Plane::Frontal;
  throw ModelError("unknown plane '" + name + "' (expected sagittal or frontal)");
}

double ModelSpec::total_mass() const {
  double m = 0.0;
  for (const auto& l : links) m += l.mass;
  return m;
}

int ModelSpec::parent_joint(int link) const {
  for (int j = 0; j < joint_count(); ++j)
    if (joints[j].child_link == link) return j;
  return -1;
}

std::vector<int> ModelSpec::foot_contacts(int side) const {
  std::vector<int> out;
  for (int c = 0; c < static_cast<int>(contacts.size()); ++c)
    if (contacts[c].link == foot_links[side]) out.push_back(c);
  return out;
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ModelError("model validation failed: " + what);
}

bool valid_link(const ModelSpec& m, int i) { return i >= 0 && i < static_cast<int>(m.links.size()); }

}  // namespace

void validate(const ModelSpec& m) {
  require(!m.links.empty(), "at least one link");
  require(m.gravity >= 0.0, "gravity >= 0");
  require(m.joint_count() + m.base_dof() <= kMaxDof, "dof <= " + std::to_string(kMaxDof));
  for (const auto& l : m.links) {
    require(l.mass > 0.0, "mass > 0 (" + l.name + ")");
    require(l.inertia > 0.0, "inertia > 0 (" + l.name + ")");
    require(l.com_offset >= 0.0 && l.com_offset <= l.length, "0 <= com_offset <= length (" + l.name + ")");
    require(std::abs(l.axis.norm() - 1.0) < 1e-9, "link axis is a unit vector (" + l.name + ")");
  }
  for (const auto& j : m.joints) {
    require(valid_link(m, j.parent_link) && valid_link(m, j.child_link), "joint link indices in range (" + j.name + ")");
    require(j.angle_limits[0] < j.angle_limits[1], "angle_limits[0] < angle_limits[1] (" + j.name + ")");
    require(j.velocity_limit > 0.0, "velocity_limit > 0 (" + j.name + ")");
    require(j.torque_limit > 0.0, "torque_limit > 0 (" + j.name + ")");
    require(j.pd_gains.kp > 0.0, "Kp > 0 (" + j.name + ")");
    require(j.pd_gains.kd >= 0.0, "Kd >= 0 (" + j.name + ")");
    require(j.nominal_angle >= j.angle_limits[0] && j.nominal_angle <= j.angle_limits[1],
            "nominal_angle within angle_limits (" + j.name + ")");
  }
  require(valid_link(m, m.base_link), "base_link in range");
  require(valid_link(m, m.torso_link), "torso_link in range");

  // Tree: the base has no parent joint, every other link exactly one, and a
  // depth-first walk from the base reaches each link once.
  const int n = static_cast<int>(m.links.size());
  std::vector<int> parent_count(n, 0);
  for (const auto& j : m.joints) ++parent_count[j.child_link];
  require(parent_count[m.base_link] == 0, "joints form a tree (base link has no parent joint)");
  for (int i = 0; i < n; ++i) {
    if (i == m.base_link) continue;
    require(parent_count[i] == 1, "joints form a tree (link '" + m.links[i].name + "' needs exactly one parent joint)");
  }
  require(m.joint_count() == n - 1, "joints form a tree (joint count = link count - 1)");
  std::vector<int> visits(n, 0);
  std::vector<int> stack{m.base_link};
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    require(++visits[cur] == 1, "joints form a tree (cycle through '" + m.links[cur].name + "')");
    for (const auto& j : m.joints)
      if (j.parent_link == cur) stack.push_back(j.child_link);
  }
  for (int i = 0; i < n; ++i) require(visits[i] == 1, "joints form a tree (link '" + m.links[i].name + "' unreachable)");
  for (const auto& j : m.joints)
    require(m.links[j.child_link].parent == j.parent_link, "link parent matches joint (" + j.name + ")");
  require(m.links[m.base_link].parent == -1, "base link parent is base");

  // Feet are optional (fixed-base test rigs); either both or none.
  const bool has_feet = m.foot_links[0] >= 0 || m.foot_links[1] >= 0;
  for (int side = 0; side < 2 && has_feet; ++side) {
    const int f = m.foot_links[side];
    require(valid_link(m, f), "foot_links in range");
    for (const auto& j : m.joints) require(j.parent_link != f, "foot_links are leaves");
    int heel = -1, toe = -1, count_heel = 0, count_toe = 0;
    for (int c = 0; c < static_cast<int>(m.contacts.size()); ++c) {
      if (m.contacts[c].link != f) continue;
      if (m.contacts[c].label == ContactLabel::Heel) heel = c, ++count_heel;
      else toe = c, ++count_toe;
    }
    require(count_heel == 1 && count_toe == 1, "each foot link has exactly one heel and one toe point");
    require(m.contacts[toe].offset.x() > m.contacts[heel].offset.x(), "toe offset is distal of heel offset");
  }
  if (has_feet) require(m.foot_links[0] != m.foot_links[1], "distinct foot links");
  for (const auto& c : m.contacts) require(valid_link(m, c.link), "contact link in range");
}

std::vector<int> traversal_order(const ModelSpec& m) {
  std::vector<int> order;
  std::vector<int> stack{m.base_link};
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    order.push_back(cur);
    // Push in reverse so children come out in joint order.
    for (int j = m.joint_count() - 1; j >= 0; --j)
      if (m.joints[j].parent_link == cur) stack.push_back(m.joints[j].child_link);
  }
  return order;
}

namespace {

LinkSpec make_link(std::string name, double mass, double inertia, double length, double com, Vec2 axis, int parent) {
  LinkSpec l;
  l.name = std::move(name);
  l.mass = mass;
  l.inertia = inertia;
  l.length = length;
  l.com_offset = com;
  l.axis = axis;
  l.parent = parent;
  return l;
}

JointSpec make_joint(std::string name, int parent, int child, Vec2 origin, double lo, double hi, double vel,
                     double torque, double kp, double kd) {
  JointSpec j;
  j.name = std::move(name);
  j.parent_link = parent;
  j.child_link = child;
  j.origin = origin;
  j.angle_limits = {lo, hi};
  j.velocity_limit = vel;
  j.torque_limit = torque;
  j.pd_gains = {kp, kd};
  j.nominal_angle = 0.0;
  return j;
}

double rod_inertia(double mass, double length) { return mass * length * length / 12.0; }

ModelSpec sagittal_model() {
  using namespace builtin;
  const Vec2 up{0.0, 1.0};
  const Vec2 down{0.0, -1.0};
  ModelSpec m;
  m.plane = Plane::Sagittal;
  m.gravity = kGravity;
  m.links.push_back(make_link("pelvis", kPelvisMass, kPelvisInertia, kPelvisLength, kPelvisCom, up, -1));
  m.links.push_back(make_link("torso", kTorsoMass, kTorsoInertia, kTorsoLength, kTorsoCom, up, 0));
  for (const char* side : {"l", "r"}) {
    const int thigh = static_cast<int>(m.links.size());
    const std::string s = side;
    m.links.push_back(make_link("thigh_" + s, kThighMass, rod_inertia(kThighMass, kThighLength), kThighLength,
                                kThighCom, down, 0));
    m.links.push_back(make_link("shank_" + s, kShankMass, rod_inertia(kShankMass, kShankLength), kShankLength,
                                kShankCom, down, thigh));
    m.links.push_back(make_link("foot_" + s, kFootMass, kFootInertia, kAnkleHeight, kFootCom, down, thigh + 1));
  }
  m.joints.push_back(make_joint("torso_pitch", 0, 1, {0.0, kPelvisLength}, -0.666, 0.13, kTorsoPitchVelocity,
                                kTorsoPitchTorque, kTorsoKp, kTorsoKd));
  for (int side = 0; side < 2; ++side) {
    const std::string s = side == 0 ? "l" : "r";
    const int thigh = 2 + 3 * side;
    m.joints.push_back(
        make_joint("hip_pitch_" + s, 0, thigh, {0.0, 0.0}, -1.619, 2.42, kHipVelocity, kHipTorque, kHipKp, kHipKd));
    m.joints.push_back(make_joint("knee_pitch_" + s, thigh, thigh + 1, {0.0, -kThighLength}, -2.057, 0.083,
                                  kKneeVelocity, kKneeTorque, kKneeKp, kKneeKd));
    m.joints.push_back(make_joint("ankle_pitch_" + s, thigh + 1, thigh + 2, {0.0, -kShankLength}, -0.65, 0.93,
                                  kAnkleVelocity, kAnkleTorque, kAnkleKp, kAnkleKd));
    m.contacts.push_back({thigh + 2, {-kFootHalfLength, -kAnkleHeight}, ContactLabel::Heel});
    m.contacts.push_back({thigh + 2, {kFootHalfLength, -kAnkleHeight}, ContactLabel::Toe});
  }
  m.base_link = 0;
  m.torso_link = 1;
  m.foot_links = {4, 7};
  return m;
}

ModelSpec frontal_model() {
  using namespace builtin;
  const Vec2 up{0.0, 1.0};
  const Vec2 down{0.0, -1.0};
  ModelSpec m;
  m.plane = Plane::Frontal;
  m.gravity = kGravity;

  // Pelvis and torso are one rigid body here; the knee is locked straight.
  const double torso_com = kPelvisLength + kTorsoCom;
  const double upper_mass = kPelvisMass + kTorsoMass;
  const double upper_com = (kPelvisMass * kPelvisCom + kTorsoMass * torso_com) / upper_mass;
  const double upper_inertia = kPelvisInertia + kPelvisMass * std::pow(upper_com - kPelvisCom, 2) + kTorsoInertia +
                               kTorsoMass * std::pow(torso_com - upper_com, 2);
  const double leg_length = kThighLength + kShankLength;
  const double shank_com = kThighLength + kShankCom;
  const double leg_mass = kThighMass + kShankMass;
  const double leg_com = (kThighMass * kThighCom + kShankMass * shank_com) / leg_mass;
  const double leg_inertia = rod_inertia(kThighMass, kThighLength) + kThighMass * std::pow(leg_com - kThighCom, 2) +
                             rod_inertia(kShankMass, kShankLength) + kShankMass * std::pow(shank_com - leg_com, 2);

  m.links.push_back(make_link("pelvis", upper_mass, upper_inertia, kPelvisLength + kTorsoLength, upper_com, up, -1));
  for (int side = 0; side < 2; ++side) {
    const std::string s = side == 0 ? "l" : "r";
    const int leg = static_cast<int>(m.links.size());
    m.links.push_back(make_link("leg_" + s, leg_mass, leg_inertia, leg_length, leg_com, down, 0));
    m.links.push_back(make_link("foot_" + s, kFootMass, kFootInertia, kAnkleHeight, kFootCom, down, leg));
    // Left is +horizontal; the right side mirrors the roll range.
    const double sign = side == 0 ? 1.0 : -1.0;
    const double hip_lo = side == 0 ? -0.5515 : -0.467;
    const double hip_hi = side == 0 ? 0.467 : 0.5515;
    m.joints.push_back(make_joint("hip_roll_" + s, 0, leg, {sign * kHipHalfSpacing, 0.0}, hip_lo, hip_hi,
                                  kHipVelocity, kHipTorque, kHipKp, kHipKd));
    m.joints.push_back(make_joint("ankle_roll_" + s, leg, leg + 1, {0.0, -leg_length}, -0.4, 0.4, kAnkleVelocity,
                                  kAnkleTorque, kAnkleKp, kAnkleKd));
    m.contacts.push_back({leg + 1, {-kFootHalfWidth, -kAnkleHeight}, ContactLabel::Heel});
    m.contacts.push_back({leg + 1, {kFootHalfWidth, -kAnkleHeight}, ContactLabel::Toe});
  }
  m.base_link = 0;
  m.torso_link = 0;
  m.foot_links = {2, 4};
  return m;
}

json vec_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

Vec2 vec_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 2) throw ModelError(std::string("expected [x, z] pair for ") + what);
  return {j[0].get<double>(), j[1].get<double>()};
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ModelError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ModelError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ModelError("missing key '" + std::string(key) + "' in " + where);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ModelError("bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

}  // namespace

ModelSpec builtin_model(Plane variant) {
  ModelSpec m = variant == Plane::Sagittal ? sagittal_model() : frontal_model();
  validate(m);
  return m;
}

json to_json(const ModelSpec& m) {
  json links = json::array();
  for (const auto& l : m.links)
    links.push_back({{"name", l.name},
                     {"mass", l.mass},
                     {"inertia", l.inertia},
                     {"length", l.length},
                     {"com_offset", l.com_offset},
                     {"axis", vec_json(l.axis)},
                     {"parent", l.parent}});
  json joints = json::array();
  for (const auto& j : m.joints)
    joints.push_back({{"name", j.name},
                      {"parent_link", j.parent_link},
                      {"child_link", j.child_link},
                      {"origin", vec_json(j.origin)},
                      {"angle_limits", {j.angle_limits[0], j.angle_limits[1]}},
                      {"velocity_limit", j.velocity_limit},
                      {"torque_limit", j.torque_limit},
                      {"kp", j.pd_gains.kp},
                      {"kd", j.pd_gains.kd},
                      {"nominal_angle", j.nominal_angle}});
  json contacts = json::array();
  for (const auto& c : m.contacts)
    contacts.push_back(
        {{"link", c.link}, {"offset", vec_json(c.offset)}, {"label", c.label == ContactLabel::Heel ? "heel" : "toe"}});
  return {{"links", links},
          {"joints", joints},
          {"contacts", contacts},
          {"gravity", m.gravity},
          {"plane", to_string(m.plane)},
          {"base_link", m.base_link},
          {"torso_link", m.torso_link},
          {"foot_links", {m.foot_links[0], m.foot_links[1]}},
          {"floating_base", m.floating_base}};
}

ModelSpec model_from_json(const json& j) {
  reject_unknown(j,
                 {"links", "joints", "contacts", "gravity", "plane", "base_link", "torso_link", "foot_links",
                  "floating_base"},
                 "model");
  ModelSpec m;
  for (const auto& lj : field<json>(j, "links", "model")) {
    reject_unknown(lj, {"name", "mass", "inertia", "length", "com_offset", "axis", "parent"}, "link");
    LinkSpec l;
    l.name = field<std::string>(lj, "name", "link");
    l.mass = field<double>(lj, "mass", "link " + l.name);
    l.inertia = field<double>(lj, "inertia", "link " + l.name);
    l.length = field<double>(lj, "length", "link " + l.name);
    l.com_offset = field<double>(lj, "com_offset", "link " + l.name);
    if (lj.contains("axis")) l.axis = vec_from(lj["axis"], "axis");
    l.parent = field<int>(lj, "parent", "link " + l.name);
    m.links.push_back(std::move(l));
  }
  for (const auto& jj : field<json>(j, "joints", "model")) {
    reject_unknown(jj,
                   {"name", "parent_link", "child_link", "origin", "angle_limits", "velocity_limit", "torque_limit",
                    "kp", "kd", "nominal_angle"},
                   "joint");
    JointSpec js;
    js.name = field<std::string>(jj, "name", "joint");
    const std::string where = "joint " + js.name;
    js.parent_link = field<int>(jj, "parent_link", where);
    js.child_link = field<int>(jj, "child_link", where);
    if (jj.contains("origin")) js.origin = vec_from(jj["origin"], "origin");
    const auto lim = field<std::vector<double>>(jj, "angle_limits", where);
    if (lim.size() != 2) throw ModelError("angle_limits must have two entries in " + where);
    js.angle_limits = {lim[0], lim[1]};
    js.velocity_limit = field<double>(jj, "velocity_limit", where);
    js.torque_limit = field<double>(jj, "torque_limit", where);
    js.pd_gains.kp = field<double>(jj, "kp", where);
    js.pd_gains.kd = field<double>(jj, "kd", where);
    js.nominal_angle = field<double>(jj, "nominal_angle", where);
    m.joints.push_back(std::move(js));
  }
  for (const auto& cj : field<json>(j, "contacts", "model")) {
    reject_unknown(cj, {"link", "offset", "label"}, "contact");
    ContactPointSpec c;
    c.link = field<int>(cj, "link", "contact");
    c.offset = vec_from(field<json>(cj, "offset", "contact"), "offset");
    const auto label = field<std::string>(cj, "label", "contact");
    if (label == "heel") c.label = ContactLabel::Heel;
    else if (label == "toe") c.label = ContactLabel::Toe;
    else throw ModelError("contact label must be heel or toe, got '" + label + "'");
    m.contacts.push_back(c);
  }
  m.gravity = field<double>(j, "gravity", "model");
  m.plane = plane_from_string(field<std::string>(j, "plane", "model"));
  m.base_link = j.value("base_link", 0);
  m.torso_link = j.value("torso_link", 0);
  const auto feet = j.value("foot_links", std::vector<int>{-1, -1});
  if (feet.size() != 2) throw ModelError("foot_links must have two entries");
  m.foot_links = {feet[0], feet[1]};
  m.floating_base = j.value("floating_base", true);
  validate(m);
  return m;
}

ModelSpec load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ModelError("parse error in " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

void save_model(const ModelSpec& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write model file " + path.string());
  out << to_json(model).dump(2) << '\n';
}

std::optional<SupportInterval> support_interval(const std::vector<ContactSample>& contacts) {
  std::optional<SupportInterval> out;
  for (const auto& c : contacts) {
    if (!c.active) continue;
    if (!out) out = SupportInterval{c.x, c.x};
    else out = SupportInterval{std::min(out->lo, c.x), std::max(out->hi, c.x)};
  }
  return out;
}

}  // namespace pushrec
