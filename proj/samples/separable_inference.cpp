// Train a small rank-1 network on synthetic data, then run its first
// convolution layer both as a dense 3-D convolution and as three 1-D passes.

#include <iostream>

#include "rank1/rank1.hpp"

int main() {
  using namespace rank1;

  NetworkSpec spec{"blobs", 3, 12, 12, 4, {}};
  spec.layers = {LayerSpec::conv(8), LayerSpec::relu(), LayerSpec::maxpool(), LayerSpec::fc(4)};
  const Dataset all = synth_blobs(4, 60, spec.input_shape(), 11);
  const Dataset train_set = slice(all, 0, 160);
  const Dataset test_set = slice(all, 160, 80);

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  Network net(spec, ConvMode::rank1, 11);
  const TrainRun run = train(net, train_set, &test_set, cfg);
  std::cout << "test accuracy after " << run.iterations << " steps: " << *run.final_accuracy() << '\n';

  ConvLayer& conv = *net.conv_layers().front();
  const Tensor image = sample_of(test_set.images, 0);
  double worst = 0.0;
  for (std::size_t m = 0; m < conv.filters().size(); ++m) {
    const Rank1Filter& f = conv.filters()[m];
    const Tensor dense = conv2d_multi(image, compose(f), PaddingMode::same, 1);
    const Tensor separable = separable_conv(image, f, PaddingMode::same);
    worst = std::max(worst, relative_error(dense, separable));
  }
  const ParamCount per = param_count(3, 3, 3);
  std::cout << "dense vs 1-D pipeline, max relative difference: " << worst << '\n';
  std::cout << "weights per filter: " << per.factored << " factored, " << per.dense << " dense\n";
  return 0;
}
