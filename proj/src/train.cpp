#include "salcal/train.hpp"

#include <algorithm>
#include <numeric>

#include "salcal/error.hpp"
#include "salcal/optim.hpp"
#include "salcal/rng.hpp"

namespace salcal {

ClassifierModel train_classifier(const TrainConfig& config, const Dataset& train) {
  if (train.samples.empty()) throw InvalidArgument("train_classifier: empty training set");
  if (config.batch_size < 1 || config.epochs < 0) throw InvalidArgument("train_classifier: invalid batch size or epochs");
  validate_dataset(train);

  ClassifierModel model;
  model.input_shape = train.image_shape;
  model.num_classes = train.num_classes;
  model.layers = config.architecture;
  validate_model(model);
  initialize_weights(model, config.seed);

  Adam adam(AdamOptions{config.learning_rate});
  Rng rng(derive_seed(config.seed, {hash_tag("minibatch")}));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size), ++batch) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      std::vector<Index> labels;
      for (std::size_t i : idx) labels.push_back(train.samples[i].label);

      Tape tape;
      LayerParams params(model.layers.size(), {0, 0});
      std::vector<NodeId> param_nodes;
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        if (!model.layers[l].has_weights()) continue;
        params[l] = {tape.leaf(model.layers[l].weight, true), tape.leaf(model.layers[l].bias, true)};
        param_nodes.push_back(params[l][0]);
        param_nodes.push_back(params[l][1]);
      }
      NodeId loss;
      std::vector<Tensor> grads;
      try {
        const NodeId x = tape.leaf(batch_images(train, idx));
        loss = ops::softmax_cross_entropy(tape, record_logits(tape, model, x, &params), labels);
        grads = tape.backward(loss, Tensor({1}, {1.0f}), param_nodes);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                           ": " + e.what());
      }
      adam.begin_step();
      std::size_t slot = 0;
      for (LayerSpec& l : model.layers) {
        if (!l.has_weights()) continue;
        adam.update(slot, l.weight.values(), grads[slot].values());
        ++slot;
        adam.update(slot, l.bias.values(), grads[slot].values());
        ++slot;
      }
    }
  }
  model.train_accuracy = accuracy(model, train);
  return model;
}

double accuracy(const ClassifierModel& model, const Dataset& data) {
  if (data.samples.empty()) return 0.0;
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor logits = forward_logits(model, batch_images(data, all));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = std::span<const float>(logits.data() + i * model.num_classes, static_cast<std::size_t>(model.num_classes));
    if (argmax(row) == data.samples[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace salcal
