#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smlm3d/common.hpp"
#include "smlm3d/image.hpp"

namespace smlm3d {

enum class Activation { LeakyRelu, Sigmoid };

struct LayerSpec {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;    // k x k, zero padded to preserve shape
  int dilation = 1;
  bool upsample_before = false;  // nearest-neighbor x`upsample` before conv
  Activation act = Activation::LeakyRelu;
};

struct DecoderArch {
  std::vector<LayerSpec> layers;
  int upsample = 4;
  double leaky_slope = 0.1;

  // Dilated context aggregation (rates 1,2,4,8), x4 nearest upsample with a
  // refinement conv, then a 1x1 projection to z slices + sigmoid.
  static DecoderArch toy(int z_slices, int channels = 32);

  void validate() const;
  size_t param_count() const;
  int out_channels() const { return layers.back().out_ch; }
};

template <typename T>
struct DecoderParams {
  DecoderArch arch;
  std::vector<std::vector<T>> weights;  // per layer, [out][in][ky][kx]
  std::vector<std::vector<T>> biases;   // per layer, [out]
  uint64_t revision = 0;  // bumped on mutation; forward caches pin it

  size_t param_count() const { return arch.param_count(); }
  std::vector<T> flatten() const;
  void unflatten(const std::vector<T>& flat);
};

// Fan-in scaled uniform init; the terminal projection bias starts low so the
// predicted grid begins near-empty.
template <typename T>
DecoderParams<T> init_decoder(const DecoderArch& arch, uint64_t seed);

template <typename T>
struct ForwardCache {
  uint64_t revision = 0;
  int in_h = 0, in_w = 0;
  std::vector<Volume<T>> inputs;   // per layer, input after any upsampling
  std::vector<Volume<T>> preacts;  // per layer, pre-activation
};

// Input: normalized camera image (1 channel). Output: sigmoid grid with
// arch.out_channels() slices at upsample x lateral resolution.
template <typename T>
Volume<T> decoder_forward(const DecoderParams<T>& params,
                          const Image<T>& frame, ForwardCache<T>* cache);

template <typename T>
struct DecoderGrads {
  std::vector<std::vector<T>> weights;
  std::vector<std::vector<T>> biases;
  Image<T> input;
};

// Exact reverse-mode gradients of decoder_forward. grad_output is with
// respect to the post-sigmoid prediction.
template <typename T>
DecoderGrads<T> decoder_backward(const DecoderParams<T>& params,
                                 const ForwardCache<T>& cache,
                                 const Volume<T>& grad_output);

template <typename T>
struct LossResult {
  double value = 0.0;
  Volume<T> grad;  // d loss / d prediction
};

// w_pos * mean((pred-target)^2) + w_l1 * mean(|pred|).
template <typename T>
LossResult<T> loss_eval(const Volume<T>& pred, const Volume<T>& target,
                        double w_pos, double w_l1);

}  // namespace smlm3d
