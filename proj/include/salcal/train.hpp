#pragma once

#include <cstdint>
#include <vector>

#include "salcal/dataset.hpp"
#include "salcal/model.hpp"

namespace salcal {

struct TrainConfig {
  std::vector<LayerSpec> architecture;  // weights are re-initialized from `seed`
  Index epochs = 10;
  Index batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

// Mini-batch Adam on softmax cross-entropy. Single threaded and
// deterministic in the seed; records the final training accuracy.
ClassifierModel train_classifier(const TrainConfig& config, const Dataset& train);

// Fraction of samples whose argmax equals the label.
double accuracy(const ClassifierModel& model, const Dataset& data);

}  // namespace salcal
