// SPDX-License-Identifier: Apache-2.0
// Trains a speed approximator to 1% held-out error (a few minutes on one core).
#include <gtest/gtest.h>

#include <iostream>

#include "test_util.hpp"

using namespace trj;
using namespace trj::testing;

namespace {

ProgramApproximator speed_approximator() {
  SyntheticSpec s;
  s.sequences = 12;
  s.frames = 1000;
  ApproximatorConfig cfg;
  cfg.hidden = 64;
  cfg.max_steps = 20000;
  cfg.target_error = 0.01;
  return train_program_approximator(find_program("speed_m1"), normalize_dataset(generate_synthetic_dataset(s)), cfg);
}

double consistency_value(const ParameterStore<double>& p, const TvaeConfig& c, const ProgramSet& ps,
                         const std::vector<Window>& windows, ConsistencyMode mode,
                         const std::vector<ProgramApproximator>* approx) {
  const auto batch = make_loss_batch<double>(ps, windows);
  Tape<double> t;
  Binding<double> bind(t, p, false);
  const auto enc = encode(bind, c, batch.states);
  return consistency_loss(bind, c, ps, kMouseLayout, enc.mu, t.constant(batch.states.front()), batch.attributes,
                          c.window_length / 2, mode, approx)
      .scalar();
}

}  // namespace

TEST(ApproximatorSlow, DirectAndApproximatorConsistencyAgree) {
  const std::vector<ProgramApproximator> approx{speed_approximator()};
  ASSERT_LE(approx[0].validation_error(), 0.01);
  const ProgramSet ps = ProgramSet::parse("speed_m1");
  const Dataset d = small_synthetic(4, 400, 31);
  std::vector<Window> windows;
  for (const auto& t : d.trajectories) {
    for (int f = 10; f < t.size(); f += 25) windows.push_back(window_at(t, f, 21));
  }
  TvaeConfig c;
  c.state_dim = kMouseLayout.state_dim();
  c.latent_dim = 8;
  c.hidden = 32;
  Rng rng(5);
  ParameterStore<double> p = init_tvae_params<double>(c, rng);
  // Decoder steps scaled to plausible per-frame speeds.
  p.set("dec.out.W", p.get("dec.out.W") * 0.02);
  const double direct = consistency_value(p, c, ps, windows, ConsistencyMode::direct, nullptr);
  const double learned = consistency_value(p, c, ps, windows, ConsistencyMode::approximator, &approx);
  EXPECT_GT(direct, 0.0);
  std::cout << "direct " << direct << " approximator " << learned << "\n";
  EXPECT_LE(std::abs(learned - direct) / direct, 0.05);
}
