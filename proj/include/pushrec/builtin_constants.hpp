#pragma once

// Mass, geometry and actuation constants of the builtin planar bipeds.
//
// Segment masses: pelvis 30, torso 45 + 14 lumped arms, thigh 12, shank 8,
// foot 4 (per side).  Total 137 kg.  With the lengths below the standing
// CoM height is 1.1002 m.  Angle limits follow the real robot's lower-body
// joint ranges converted to the counter-clockwise (horizontal, up)
// convention; torque and velocity limits are the actuator limits of the
// same joints.  Gains are config defaults tuned for a settled stance.

namespace pushrec::builtin {

inline constexpr double kGravity = 9.81;

inline constexpr double kPelvisMass = 30.0;
inline constexpr double kTorsoMass = 45.0 + 14.0;
inline constexpr double kThighMass = 12.0;
inline constexpr double kShankMass = 8.0;
inline constexpr double kFootMass = 4.0;

inline constexpr double kPelvisLength = 0.10;
inline constexpr double kPelvisCom = 0.05;
inline constexpr double kPelvisInertia = 0.30;

inline constexpr double kTorsoLength = 0.65;
inline constexpr double kTorsoCom = 0.40;
inline constexpr double kTorsoInertia = 1.80;

inline constexpr double kThighLength = 0.48;
inline constexpr double kThighCom = 0.21;
inline constexpr double kShankLength = 0.48;
inline constexpr double kShankCom = 0.21;

inline constexpr double kAnkleHeight = 0.09;
inline constexpr double kFootCom = 0.045;
inline constexpr double kFootInertia = 0.0252;

// Sagittal foot: heel and toe 0.13 m either side of the ankle (0.26 m foot).
inline constexpr double kFootHalfLength = 0.13;
// Frontal foot: 0.16 m wide, hips 0.11 m off centre, outer edges at +-0.19 m.
inline constexpr double kFootHalfWidth = 0.08;
inline constexpr double kHipHalfSpacing = 0.11;

inline constexpr double kHipHeight = kThighLength + kShankLength + kAnkleHeight;

// Actuator limits.
inline constexpr double kTorsoPitchTorque = 150.0;
inline constexpr double kHipTorque = 350.0;
inline constexpr double kKneeTorque = 350.0;
inline constexpr double kAnkleTorque = 205.0;

inline constexpr double kTorsoPitchVelocity = 9.00;
inline constexpr double kHipVelocity = 6.11;
inline constexpr double kKneeVelocity = 11.0;
inline constexpr double kAnkleVelocity = 11.0;

// PD gains (N m/rad, N m s/rad).
inline constexpr double kHipKp = 2000.0;
inline constexpr double kHipKd = 200.0;
inline constexpr double kKneeKp = 1500.0;
inline constexpr double kKneeKd = 150.0;
inline constexpr double kAnkleKp = 1500.0;
inline constexpr double kAnkleKd = 300.0;
inline constexpr double kTorsoKp = 1000.0;
inline constexpr double kTorsoKd = 100.0;

}  // namespace pushrec::builtin
