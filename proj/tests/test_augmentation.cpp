// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numbers>
#include <set>

#include "test_util.hpp"

using namespace trj;
using namespace trj::testing;

namespace {

double max_abs_diff(const Window& a, const Window& b) {
  double m = 0.0;
  for (std::size_t t = 0; t < a.frames.size(); ++t) {
    const auto u = a.frames[t].stacked(), v = b.frames[t].stacked();
    for (std::size_t i = 0; i < u.size(); ++i) m = std::max(m, std::abs(u[i] - v[i]));
  }
  return m;
}

Augmentation make(AugmentationKind k) {
  Augmentation a;
  a.kind = k;
  return a;
}

}  // namespace

TEST(Augmentation, RotationByZeroIsIdentity) {
  Rng rng(1);
  const Window w = random_window(rng);
  EXPECT_EQ(max_abs_diff(apply_augmentation(make(AugmentationKind::rotation), w), w), 0.0);
}

TEST(Augmentation, ReflectionIsAnInvolution) {
  Rng rng(2);
  const Window w = random_window(rng);
  for (double axis : {0.0, 0.4, 1.3, 2.9}) {
    Augmentation a = make(AugmentationKind::reflection);
    a.axis = axis;
    const Window once = apply_augmentation(a, w);
    EXPECT_GT(max_abs_diff(once, w), 1e-6);
    EXPECT_LE(max_abs_diff(apply_augmentation(a, once), w), 1e-12);
  }
}

TEST(Augmentation, TranslationShiftsXOnly) {
  Rng rng(3);
  const Window w = random_window(rng);
  Augmentation a = make(AugmentationKind::translation);
  a.dx = 0.1;
  const Window out = apply_augmentation(a, w);
  for (std::size_t t = 0; t < w.frames.size(); ++t) {
    const auto u = w.frames[t].stacked(), v = out.frames[t].stacked();
    for (std::size_t i = 0; i < u.size(); i += 2) {
      EXPECT_NEAR(v[i], u[i] + 0.1, 1e-15);
      EXPECT_EQ(v[i + 1], u[i + 1]);
    }
  }
}

TEST(Augmentation, TranslationResamplesOrFails) {
  // Near the right edge: +0.1 would leave the allowed range, a resampled offset fits.
  const FrameState f = two_mice(1.45, 0.5, 0.0, 1.2, 0.5, 0.0);
  const Window w = window_of(std::vector<FrameState>(5, f));
  Augmentation a = make(AugmentationKind::translation);
  a.dx = 0.1;
  a.max_offset = 0.1;
  a.seed = 5;
  const Window out = apply_augmentation(a, w);
  for (const auto& fr : out.frames) {
    for (double v : fr.stacked()) EXPECT_TRUE(v >= kNormalizedMin && v <= kNormalizedMax);
  }
  // Spanning the whole allowed range in x leaves no room for any shift.
  FrameState wide = two_mice(0.5, 0.5, 0.0, 0.5, 0.5, 0.0);
  wide.set_keypoint(0, 0, {kNormalizedMin, 0.5});
  wide.set_keypoint(1, 0, {kNormalizedMax, 0.5});
  EXPECT_THROW(apply_augmentation(a, window_of({wide})), AugmentationError);
}

TEST(Augmentation, ShapeIsPreserved) {
  Rng rng(4);
  const Window w = random_window(rng);
  for (int i = 0; i < 200; ++i) {
    const Window out = apply_augmentation(sample_augmentation(rng, Domain::mouse), w);
    ASSERT_EQ(out.length(), w.length());
    EXPECT_EQ(out.center_index, w.center_index);
    EXPECT_EQ(out.layout().agents, 2);
    EXPECT_EQ(out.layout().keypoints, 7);
  }
}

TEST(Augmentation, FlyNeverDrawsNoise) {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) EXPECT_NE(sample_augmentation(rng, Domain::fly).kind, AugmentationKind::keypoint_noise);
}

TEST(Augmentation, MouseDrawsEveryKind) {
  Rng rng(6);
  std::map<AugmentationKind, int> counts;
  for (int i = 0; i < 10000; ++i) ++counts[sample_augmentation(rng, Domain::mouse).kind];
  ASSERT_EQ(counts.size(), 4u);
  for (const auto& [k, n] : counts) EXPECT_NEAR(n, 2500, 250) << to_string(k);
}

TEST(Augmentation, SeededSamplingIsReproducible) {
  Rng a(9), b(9);
  for (int i = 0; i < 500; ++i) {
    const Augmentation x = sample_augmentation(a, Domain::mouse), y = sample_augmentation(b, Domain::mouse);
    EXPECT_EQ(x.kind, y.kind);
    EXPECT_EQ(x.angle, y.angle);
    EXPECT_EQ(x.axis, y.axis);
    EXPECT_EQ(x.dx, y.dx);
    EXPECT_EQ(x.dy, y.dy);
    EXPECT_EQ(x.seed, y.seed);
  }
}

TEST(Augmentation, PolicyValidation) {
  AugmentationPolicy p;
  p.noise_sigma = 0.01;
  Rng rng(1);
  EXPECT_THROW(sample_augmentation(rng, Domain::mouse, p), ConfigError);
  p.noise_sigma = 0.002;
  p.kinds = {AugmentationKind::keypoint_noise};
  EXPECT_THROW(sample_augmentation(rng, Domain::fly, p), ConfigError);
  EXPECT_THROW(AugmentationPolicy::parse_kinds("rotation,shear"), ConfigError);
}

TEST(Preservation, GeometricKindsPreserveEveryProgram) {
  Rng rng(12);
  const ProgramSet ps = ProgramSet::parse("all_mouse");
  AugmentationPolicy geometric;
  geometric.kinds = {AugmentationKind::rotation, AugmentationKind::reflection, AugmentationKind::translation};
  for (int i = 0; i < 100; ++i) {
    const Window w = random_window(rng);
    const auto report = check_attribute_preserving(ps, w, sample_augmentation(rng, Domain::mouse, geometric));
    EXPECT_TRUE(report.passed);
    EXPECT_LE(report.max_deviation(), 1e-9);
  }
}

TEST(Preservation, ZeroNoiseHasZeroDeviation) {
  Rng rng(13);
  const ProgramSet ps = ProgramSet::parse("all_mouse");
  Augmentation a = make(AugmentationKind::keypoint_noise);
  a.sigma = 0.0;
  a.seed = 77;
  const auto report = check_attribute_preserving(ps, random_window(rng), a);
  EXPECT_EQ(report.max_deviation(), 0.0);
  EXPECT_TRUE(report.passed);
}

TEST(Preservation, NoiseStaysWithinBound) {
  Rng rng(14);
  const ProgramSet ps = ProgramSet::parse("all_mouse");
  for (int i = 0; i < 100; ++i) {
    Augmentation a = make(AugmentationKind::keypoint_noise);
    a.sigma = 0.002;
    a.seed = rng();
    const auto report = check_attribute_preserving(ps, random_window(rng), a);
    EXPECT_TRUE(report.passed);
    for (const auto& p : report.programs) EXPECT_GT(p.bound, 0.0) << p.id;
  }
}

TEST(Preservation, GradientNormOfSpeed) {
  // speed = |c_t - c_{t-1}|, the centroid averaging 7 keypoints: |grad| = sqrt(2 * 7 / 49).
  const FrameState a = two_mice(0.2, 0.2, 0.0, 0.8, 0.8, 0.0), b = two_mice(0.25, 0.2, 0.0, 0.8, 0.8, 0.0);
  const Window w = window_of({a, b, b});
  EXPECT_NEAR(program_gradient_norm(find_program("speed_m1"), w), std::sqrt(2.0 / 7.0), 1e-12);
}
