// SPDX-License-Identifier: Apache-2.0
//
// Library walkthrough on a small synthetic recording set: fit program
// discretizers, train an embedding for a few hundred steps, then compare a
// keypoint-only classifier with one that also sees the embedding.

#include <cstdio>

#include "trj/trj.hpp"

int main() {
  using namespace trj;
  warning_sink() = nullptr;

  SyntheticSpec spec;
  spec.sequences = 8;
  spec.frames = 600;
  const DatasetSplits splits = split_by_source(normalize_dataset(generate_synthetic_dataset(spec)), 0.6, 0.2);

  ProgramSet programs = ProgramSet::parse("all_mouse");
  fit_program_set(programs, splits.train);

  TvaeConfig tcfg;
  tcfg.state_dim = splits.train.layout().state_dim();
  tcfg.latent_dim = 16;
  tcfg.hidden = 64;
  EmbeddingModel model = EmbeddingModel::create(tcfg, programs, /*seed=*/1);

  TrainConfig train;
  train.steps = 300;
  train.batch = 64;
  train.lr = 1e-3;
  train.on_step = [](int step, const LossBreakdown& l) {
    if (step % 50 == 0) std::printf("step %4d  total %.4f  elbo %.4f  consistency %.4f\n", step, l.total, l.tvae, l.consistency);
  };
  train_embedding(model, splits.train, LossConfig::parse("tvae,contrastive,consistency"), train);

  const TvaeModel* none = nullptr;
  for (const TvaeModel* m : {none, static_cast<const TvaeModel*>(&model.tvae)}) {
    const FeatureTable tr = extract_features(m, splits.train, BaseFeatures::keypoints);
    const FeatureTable va = extract_features(m, splits.val, BaseFeatures::keypoints);
    const FeatureTable te = extract_features(m, splits.test, BaseFeatures::keypoints);
    ClassifierConfig cc;
    cc.hidden = {64, 16};
    cc.classes = kBehaviorCount;
    const ClassifierModel clf = train_classifier(tr.values, tr.labels, va.values, va.labels, cc);
    const MapResult map = mean_average_precision(clf.predict_proba(te.values), te.labels);
    std::printf("%-16s dim %3ld  test MAP %.3f\n", m ? "keypoints+treba" : "keypoints", static_cast<long>(tr.dim()), map.map);
  }
  return 0;
}
