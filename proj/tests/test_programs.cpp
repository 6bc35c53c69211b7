// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numbers>

#include "test_util.hpp"

using namespace trj;
using namespace trj::testing;

namespace {

double eval(const std::string& id, const Window& w) { return evaluate_program(find_program(id), w).value; }

// Frozen from an independent arctangent computation: |atan2(4, 3) - 0.5|.
constexpr double kFacingOracle = 0.4272952180016122;

}  // namespace

TEST(Programs, FacingAngleQuarterTurn) {
  const Window w = window_of({two_mice(0, 0, 0.0, 1, 1, 2.0)});
  EXPECT_NEAR(eval("facing_angle_m1", w), std::numbers::pi / 4, 1e-12);
}

TEST(Programs, FacingAngleAgainstArctangentOracle) {
  const Window w = window_of({two_mice(0, 0, 0.5, 3, 4, 1.0)});
  EXPECT_NEAR(eval("facing_angle_m1", w), kFacingOracle, 1e-12);
  EXPECT_NEAR(eval("facing_angle_m1", w), 0.4273, 5e-5);
}

TEST(Programs, SpeedIsCentroidDisplacement) {
  const FrameState a = two_mice(0, 0, 0.3, 9, 9, 0.0), b = two_mice(3, 4, 0.3, 9, 9, 0.0);
  const Window w = window_of({a, b, b});
  ASSERT_EQ(w.center_index, 1);
  EXPECT_NEAR(eval("speed_m1", w), 5.0, 1e-12);
  EXPECT_NEAR(eval("speed_m2", w), 0.0, 1e-12);
  // Pure translation moves nose and centroid together.
  EXPECT_NEAR(eval("nose_movement_m1", w), 0.0, 1e-12);
}

TEST(Programs, StationaryAgentHasNoMotion) {
  const FrameState f = two_mice(0.4, 0.4, 1.0, 0.6, 0.5, -2.0);
  const Window w = window_of(std::vector<FrameState>(21, f));
  for (const char* id : {"speed_m1", "speed_m2", "nose_movement_m1", "nose_movement_m2"}) EXPECT_EQ(eval(id, w), 0.0);
}

TEST(Programs, NoseMovementIsRelativeToCentroid) {
  // Turning in place moves the nose but not the centroid.
  const FrameState a = two_mice(0.5, 0.5, 0.0, 0.2, 0.2, 0.0), b = two_mice(0.5, 0.5, 0.1, 0.2, 0.2, 0.0);
  const Window w = window_of({a, b, b});
  const Keypoint n0 = a.keypoint(0, mouse_kp::nose), n1 = b.keypoint(0, mouse_kp::nose);
  EXPECT_NEAR(eval("nose_movement_m1", w), std::hypot(n1.x - n0.x, n1.y - n0.y), 1e-12);
  EXPECT_NEAR(eval("speed_m1", w), 0.0, 1e-12);
}

TEST(Programs, FlyAxisRatioAndWings) {
  FlyPose f;
  f.centroid = {0.3, 0.3};
  f.orientation = 0.7;
  f.major_axis = 0.04;
  f.minor_axis = 0.01;
  f.left_wing = {0.3 - 0.02 * std::cos(0.7) + 0.01 * std::sin(0.7), 0.3 - 0.02 * std::sin(0.7) - 0.01 * std::cos(0.7)};
  f.right_wing = f.left_wing;
  FlyPose g = f;
  g.centroid = {0.6, 0.6};
  g.left_wing = {0.6 - 0.02 * std::cos(0.7), 0.6 - 0.02 * std::sin(0.7)};
  g.right_wing = g.left_wing;
  const Window w = window_of({FrameState::from_agents({encode_fly_pose(f), encode_fly_pose(g)})});
  EXPECT_NEAR(eval("axis_ratio_f1", w), 4.0, 1e-12);
  EXPECT_NEAR(eval("min_wing_angle_f1", w), std::atan2(0.01, 0.02), 1e-12);
  EXPECT_NEAR(eval("max_wing_angle_f2", w), 0.0, 1e-7);
  EXPECT_NEAR(eval("fly_distance", w), 0.3 * std::sqrt(2.0), 1e-12);
}

TEST(Programs, MouseProgramOnFlyWindowIsRejected) {
  FlyPose f;
  const Window w = window_of({FrameState::from_agents({encode_fly_pose(f), encode_fly_pose(f)})});
  EXPECT_THROW(eval("speed_m1", w), SchemaError);
}

TEST(Programs, UnknownIdIsARegistryError) {
  EXPECT_THROW(find_program("speed_m3"), RegistryError);
  EXPECT_THROW(ProgramSet::parse("speed_m1,bogus"), RegistryError);
  EXPECT_THROW(ProgramSet::parse("speed_m1,speed_f1"), ConfigError);
  EXPECT_EQ(ProgramSet::parse("all_mouse").size(), 10);
  EXPECT_EQ(ProgramSet::parse("all_fly").size(), 13);
}

TEST(Discretizer, UniformOneToNine) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9};
  const Discretizer d = fit_discretizer(v);
  // Linear-interpolation percentiles computed outside the library.
  EXPECT_NEAR(d.low, 3.666666666666667, 1e-12);
  EXPECT_NEAR(d.high, 6.333333333333334, 1e-12);
}

TEST(Discretizer, ThreeMassesAreSeparated) {
  std::vector<double> v;
  for (int c = 0; c < 3; ++c) v.insert(v.end(), 50, static_cast<double>(c));
  const Discretizer d = fit_discretizer(v);
  EXPECT_NEAR(d.low, 0.6666666666666714, 1e-12);
  EXPECT_NEAR(d.high, 1.3333333333333428, 1e-12);
  EXPECT_EQ(discretize(0.0, d), 0);
  EXPECT_EQ(discretize(1.0, d), 1);
  EXPECT_EQ(discretize(2.0, d), 2);
  for (double f : d.class_fractions) EXPECT_NEAR(f, 1.0 / 3.0, 1e-12);
}

TEST(Discretizer, ConstantValuesAreDegenerate) {
  EXPECT_THROW(fit_discretizer(std::vector<double>(100, 2.5)), DegenerateDistributionError);
  EXPECT_THROW(fit_discretizer(std::vector<double>{1, 1, 2, 2}), DegenerateDistributionError);
}

TEST(Discretizer, BoundariesAreLeftClosed) {
  Discretizer d;
  d.low = 1.0;
  d.high = 2.0;
  EXPECT_EQ(discretize(1.0, d), 0);
  EXPECT_EQ(discretize(0.5, d), 0);
  EXPECT_EQ(discretize(1.5, d), 1);
  EXPECT_EQ(discretize(2.0, d), 1);
  EXPECT_EQ(discretize(2.5, d), 2);
}

TEST(ProgramSetTest, FitBalancesClassesOnSample) {
  const Dataset d = small_synthetic(4, 400);
  ProgramSet ps = ProgramSet::parse("all_mouse");
  fit_program_set(ps, d);
  ASSERT_TRUE(ps.fitted());
  for (const auto& disc : ps.discretizers()) {
    for (double f : disc.class_fractions) EXPECT_NEAR(f, 1.0 / 3.0, 0.10);
  }
  for (const auto& s : ps.scales()) EXPECT_GT(s.scale, 0.0);
}

TEST(ProgramSetTest, ArityAndDeterminism) {
  const Dataset d = small_synthetic(3, 300);
  ProgramSet ps = ProgramSet::parse("all_mouse");
  fit_program_set(ps, d);
  const Window w = window_at(d.trajectories[1], 150, 21);
  const auto a = evaluate_program_set(ps, w);
  const auto b = evaluate_program_set(ps, w);
  EXPECT_EQ(a.values.size(), 10u);
  EXPECT_EQ(a.classes.size(), 10u);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.classes, b.classes);
  for (int c : a.classes) EXPECT_TRUE(c >= 0 && c <= 2);
}

TEST(ProgramSetTest, InvariantUnderRotationTranslationReflection) {
  Rng rng(11);
  const ProgramSet ps = ProgramSet::parse("all_mouse");
  for (int i = 0; i < 50; ++i) {
    const Window w = random_window(rng);
    const auto base = evaluate_program_set(ps, w).values;
    Augmentation rot;
    rot.kind = AugmentationKind::rotation;
    rot.angle = std::numbers::pi / 2;
    Augmentation tr;
    tr.kind = AugmentationKind::translation;
    tr.dx = 0.05;
    tr.dy = -0.03;
    Augmentation ref;
    ref.kind = AugmentationKind::reflection;
    ref.axis = 0.3 * i;
    for (const auto& a : {rot, tr, ref}) {
      const auto v = evaluate_program_set(ps, apply_augmentation(a, w)).values;
      for (int j = 0; j < ps.size(); ++j) EXPECT_NEAR(v[j], base[j], 1e-9) << ps[j].id;
    }
  }
}
