// Quickstart: generate a small synthetic dataset, train a desk-scale model,
// describe the held-out transformations and score them.

#include <iostream>

#include "vtt/vtt.hpp"

using namespace vtt;

int main() {
  synth::SyntheticTaskSpec spec;
  spec.seed = 7;
  spec.split = {0.75, 0.0, 0.25};
  const auto data = synth::generate(spec, 48);
  std::cout << "samples: " << data.manifest.samples.size() << " (test " << data.manifest.split(Split::kTest).size()
            << ")\n";

  auto train_cfg = desk_train_config();
  train_cfg.epochs = 40;
  train_cfg.warmup_steps = 20;
  const auto result = train(data.manifest, data.store, desk_model_config(), train_cfg, [](const EpochLog& e) {
    if (e.epoch % 10 == 0) std::cout << "epoch " << e.epoch << " loss " << e.train_loss << '\n';
  });

  const auto model = result.last.build_model();
  const auto vocab = result.last.vocabulary();
  const auto test = data.manifest.split(Split::kTest);
  metrics::Predictions preds;
  for (const auto* s : test) {
    preds[s->sample_id] = model->generate(sample_matrix(*s, data.store), vocab, SamplingConfig::greedy(), s->sample_id).texts();
  }

  const auto* first = test.front();
  for (std::size_t i = 0; i < first->transformations.size(); ++i) {
    std::cout << "  ref: " << first->transformations[i] << "  |  pred: " << preds[first->sample_id][i] << '\n';
  }
  const auto report = metrics::evaluate_corpus(preds, data.manifest, Split::kTest);
  std::cout << report.to_json()["corpus"].dump() << '\n';
}
