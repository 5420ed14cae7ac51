#include "smlm3d/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "smlm3d/rng.hpp"

namespace smlm3d {

DecoderArch DecoderArch::toy(int z_slices, int channels) {
  DecoderArch a;
  a.upsample = 4;
  a.layers = {
      {1, channels, 3, 1, false, Activation::LeakyRelu},
      {channels, channels, 3, 2, false, Activation::LeakyRelu},
      {channels, channels, 3, 4, false, Activation::LeakyRelu},
      {channels, channels, 3, 8, false, Activation::LeakyRelu},
      {channels, channels, 3, 1, true, Activation::LeakyRelu},
      {channels, z_slices, 1, 1, false, Activation::Sigmoid},
  };
  return a;
}

void DecoderArch::validate() const {
  require(!layers.empty(), ErrorKind::Data, "decoder: empty architecture");
  require(upsample >= 1, ErrorKind::Data, "decoder: upsample must be >= 1");
  int upsample_stages = 0;
  int ch = layers.front().in_ch;
  for (const LayerSpec& l : layers) {
    require(l.in_ch == ch, ErrorKind::Data, "decoder: channel chain mismatch");
    require(l.kernel % 2 == 1 && l.kernel >= 1, ErrorKind::Data,
            "decoder: kernels must be odd");
    require(l.dilation >= 1, ErrorKind::Data, "decoder: dilation must be >= 1");
    if (l.upsample_before) ++upsample_stages;
    ch = l.out_ch;
  }
  require(upsample_stages == 1, ErrorKind::Data,
          "decoder: exactly one upsampling stage required");
  require(layers.back().act == Activation::Sigmoid, ErrorKind::Data,
          "decoder: terminal activation must be sigmoid");
}

size_t DecoderArch::param_count() const {
  size_t n = 0;
  for (const LayerSpec& l : layers) {
    n += static_cast<size_t>(l.out_ch) * l.in_ch * l.kernel * l.kernel;
    n += static_cast<size_t>(l.out_ch);
  }
  return n;
}

template <typename T>
std::vector<T> DecoderParams<T>::flatten() const {
  std::vector<T> flat;
  flat.reserve(param_count());
  for (size_t i = 0; i < weights.size(); ++i) {
    flat.insert(flat.end(), weights[i].begin(), weights[i].end());
    flat.insert(flat.end(), biases[i].begin(), biases[i].end());
  }
  return flat;
}

template <typename T>
void DecoderParams<T>::unflatten(const std::vector<T>& flat) {
  require(flat.size() == param_count(), ErrorKind::Data,
          "decoder: checkpoint size does not match architecture");
  size_t pos = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    std::copy(flat.begin() + pos, flat.begin() + pos + weights[i].size(),
              weights[i].begin());
    pos += weights[i].size();
    std::copy(flat.begin() + pos, flat.begin() + pos + biases[i].size(),
              biases[i].begin());
    pos += biases[i].size();
  }
  ++revision;
}

template <typename T>
DecoderParams<T> init_decoder(const DecoderArch& arch, uint64_t seed) {
  arch.validate();
  DecoderParams<T> p;
  p.arch = arch;
  Rng rng(seed);
  for (size_t li = 0; li < arch.layers.size(); ++li) {
    const LayerSpec& l = arch.layers[li];
    const size_t nw = static_cast<size_t>(l.out_ch) * l.in_ch * l.kernel * l.kernel;
    const double bound =
        std::sqrt(1.0 / (static_cast<double>(l.in_ch) * l.kernel * l.kernel));
    std::vector<T> w(nw);
    for (T& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    std::vector<T> b(l.out_ch, T(0));
    if (li + 1 == arch.layers.size()) {
      for (T& v : b) v = T(-4);  // start with a near-empty grid
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

namespace {

template <typename T>
Volume<T> upsample_nearest(const Volume<T>& in, int f) {
  Volume<T> out(in.d, in.h * f, in.w * f);
  for (int ch = 0; ch < in.d; ++ch) {
    for (int r = 0; r < out.h; ++r) {
      const T* src = &in.at(ch, r / f, 0);
      T* dst = &out.at(ch, r, 0);
      for (int c = 0; c < out.w; ++c) dst[c] = src[c / f];
    }
  }
  return out;
}

// Adjoint of nearest upsampling: sum each f x f block.
template <typename T>
Volume<T> downsample_sum(const Volume<T>& in, int f) {
  Volume<T> out(in.d, in.h / f, in.w / f, T(0));
  for (int ch = 0; ch < in.d; ++ch) {
    for (int r = 0; r < in.h; ++r) {
      const T* src = &in.at(ch, r, 0);
      T* dst = &out.at(ch, r / f, 0);
      for (int c = 0; c < in.w; ++c) dst[c / f] += src[c];
    }
  }
  return out;
}

// SAME convolution with zero padding; out[o] = sum_i w[o][i] (*) in[i] + b[o].
template <typename T>
void conv_forward(const LayerSpec& l, const std::vector<T>& w,
                  const std::vector<T>& b, const Volume<T>& in,
                  Volume<T>& out) {
  const int k = l.kernel;
  const int half = k / 2;
  const int dil = l.dilation;
  out = Volume<T>(l.out_ch, in.h, in.w, T(0));
  for (int o = 0; o < l.out_ch; ++o) {
    for (int r = 0; r < in.h; ++r) {
      T* orow = &out.at(o, r, 0);
      for (int c = 0; c < in.w; ++c) orow[c] = b[o];
    }
    for (int i = 0; i < l.in_ch; ++i) {
      const T* wk = &w[(static_cast<size_t>(o) * l.in_ch + i) * k * k];
      for (int ky = 0; ky < k; ++ky) {
        const int dy = (ky - half) * dil;
        for (int kx = 0; kx < k; ++kx) {
          const int dx = (kx - half) * dil;
          const T wv = wk[ky * k + kx];
          if (wv == T(0)) continue;
          const int r_lo = std::max(0, -dy);
          const int r_hi = std::min(in.h, in.h - dy);
          for (int r = r_lo; r < r_hi; ++r) {
            const T* irow = &in.at(i, r + dy, 0);
            T* orow = &out.at(o, r, 0);
            const int c_lo = std::max(0, -dx);
            const int c_hi = std::min(in.w, in.w - dx);
            for (int c = c_lo; c < c_hi; ++c) {
              orow[c] += wv * irow[c + dx];
            }
          }
        }
      }
    }
  }
}

// Gradients of the SAME convolution: weight grad correlates input with the
// output cotangent, input grad convolves the cotangent with the flipped
// kernel (computed here directly from bounds).
template <typename T>
void conv_backward(const LayerSpec& l, const std::vector<T>& w,
                   const Volume<T>& in, const Volume<T>& gout,
                   std::vector<T>& gw, std::vector<T>& gb, Volume<T>& gin) {
  const int k = l.kernel;
  const int half = k / 2;
  const int dil = l.dilation;
  gw.assign(w.size(), T(0));
  gb.assign(l.out_ch, T(0));
  gin = Volume<T>(l.in_ch, in.h, in.w, T(0));
  for (int o = 0; o < l.out_ch; ++o) {
    T bsum = T(0);
    for (int r = 0; r < in.h; ++r) {
      const T* grow = &gout.at(o, r, 0);
      for (int c = 0; c < in.w; ++c) bsum += grow[c];
    }
    gb[o] = bsum;
    for (int i = 0; i < l.in_ch; ++i) {
      T* gwk = &gw[(static_cast<size_t>(o) * l.in_ch + i) * k * k];
      const T* wk = &w[(static_cast<size_t>(o) * l.in_ch + i) * k * k];
      for (int ky = 0; ky < k; ++ky) {
        const int dy = (ky - half) * dil;
        for (int kx = 0; kx < k; ++kx) {
          const int dx = (kx - half) * dil;
          const int r_lo = std::max(0, -dy);
          const int r_hi = std::min(in.h, in.h - dy);
          const int c_lo = std::max(0, -dx);
          const int c_hi = std::min(in.w, in.w - dx);
          const T wv = wk[ky * k + kx];
          // Separate reduction and scatter passes so both vectorize.
          T wsum = T(0);
          for (int r = r_lo; r < r_hi; ++r) {
            const T* irow = &in.at(i, r + dy, 0);
            const T* grow = &gout.at(o, r, 0);
            T acc0 = T(0), acc1 = T(0);
            int c = c_lo;
            for (; c + 1 < c_hi; c += 2) {
              acc0 += irow[c + dx] * grow[c];
              acc1 += irow[c + 1 + dx] * grow[c + 1];
            }
            for (; c < c_hi; ++c) acc0 += irow[c + dx] * grow[c];
            wsum += acc0 + acc1;
          }
          if (wv != T(0)) {
            for (int r = r_lo; r < r_hi; ++r) {
              T* girow = &gin.at(i, r + dy, 0);
              const T* grow = &gout.at(o, r, 0);
              for (int c = c_lo; c < c_hi; ++c) girow[c + dx] += wv * grow[c];
            }
          }
          gwk[ky * k + kx] += wsum;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Volume<T> decoder_forward(const DecoderParams<T>& params,
                          const Image<T>& frame, ForwardCache<T>* cache) {
  params.arch.validate();
  require(frame.h > 0 && frame.w > 0, ErrorKind::Data, "decoder: empty frame");
  require(params.arch.layers.front().in_ch == 1, ErrorKind::Data,
          "decoder: first layer must take a single channel");
  require(params.weights.size() == params.arch.layers.size(),
          ErrorKind::Data, "decoder: parameter/arch layer count mismatch");

  Volume<T> x(1, frame.h, frame.w);
  std::copy(frame.data.begin(), frame.data.end(), x.data.begin());

  if (cache) {
    cache->revision = params.revision;
    cache->in_h = frame.h;
    cache->in_w = frame.w;
    cache->inputs.clear();
    cache->preacts.clear();
  }

  const double slope = params.arch.leaky_slope;
  for (size_t li = 0; li < params.arch.layers.size(); ++li) {
    const LayerSpec& l = params.arch.layers[li];
    if (l.upsample_before) x = upsample_nearest(x, params.arch.upsample);
    require(l.in_ch == x.d, ErrorKind::Data, "decoder: channel mismatch");
    Volume<T> pre;
    conv_forward(l, params.weights[li], params.biases[li], x, pre);
    if (cache) cache->inputs.push_back(std::move(x));
    Volume<T> act(pre.d, pre.h, pre.w);
    if (l.act == Activation::LeakyRelu) {
      for (size_t i = 0; i < pre.size(); ++i) {
        const T v = pre.data[i];
        act.data[i] = v > T(0) ? v : static_cast<T>(slope) * v;
      }
    } else {
      for (size_t i = 0; i < pre.size(); ++i) {
        act.data[i] = static_cast<T>(1) /
                      (static_cast<T>(1) + std::exp(-pre.data[i]));
      }
    }
    if (cache) cache->preacts.push_back(std::move(pre));
    x = std::move(act);
  }
  return x;
}

template <typename T>
DecoderGrads<T> decoder_backward(const DecoderParams<T>& params,
                                 const ForwardCache<T>& cache,
                                 const Volume<T>& grad_output) {
  require(cache.revision == params.revision, ErrorKind::Data,
          "decoder_backward: stale forward cache");
  require(cache.inputs.size() == params.arch.layers.size(), ErrorKind::Data,
          "decoder_backward: cache does not match architecture");
  const Volume<T>& last_pre = cache.preacts.back();
  require(grad_output.same_shape(last_pre), ErrorKind::Data,
          "decoder_backward: grad_output shape mismatch");

  DecoderGrads<T> grads;
  grads.weights.resize(params.weights.size());
  grads.biases.resize(params.biases.size());

  const double slope = params.arch.leaky_slope;
  Volume<T> g = grad_output;
  for (int li = static_cast<int>(params.arch.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& l = params.arch.layers[li];
    const Volume<T>& pre = cache.preacts[li];
    // Through the activation.
    if (l.act == Activation::LeakyRelu) {
      for (size_t i = 0; i < g.size(); ++i) {
        if (pre.data[i] <= T(0)) g.data[i] *= static_cast<T>(slope);
      }
    } else {
      for (size_t i = 0; i < g.size(); ++i) {
        const T s = static_cast<T>(1) /
                    (static_cast<T>(1) + std::exp(-pre.data[i]));
        g.data[i] *= s * (static_cast<T>(1) - s);
      }
    }
    Volume<T> gin;
    conv_backward(l, params.weights[li], cache.inputs[li], g,
                  grads.weights[li], grads.biases[li], gin);
    if (l.upsample_before) gin = downsample_sum(gin, params.arch.upsample);
    g = std::move(gin);
  }
  require(g.d == 1, ErrorKind::Data, "decoder_backward: input grad not 1-ch");
  grads.input = Image<T>(cache.in_h, cache.in_w);
  std::copy(g.data.begin(), g.data.end(), grads.input.data.begin());
  return grads;
}

template <typename T>
LossResult<T> loss_eval(const Volume<T>& pred, const Volume<T>& target,
                        double w_pos, double w_l1) {
  require(pred.same_shape(target), ErrorKind::Data,
          "loss_eval: prediction/target grid spec mismatch");
  require(pred.size() > 0, ErrorKind::Data, "loss_eval: empty grids");
  LossResult<T> res;
  res.grad = Volume<T>(pred.d, pred.h, pred.w, T(0));
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double mse = 0.0, l1 = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double p = static_cast<double>(pred.data[i]);
    const double t = static_cast<double>(target.data[i]);
    const double d = p - t;
    mse += d * d;
    l1 += std::abs(p);
    const double sign = p > 0.0 ? 1.0 : (p < 0.0 ? -1.0 : 0.0);
    res.grad.data[i] =
        static_cast<T>((w_pos * 2.0 * d + w_l1 * sign) * inv_n);
  }
  res.value = w_pos * (mse * inv_n) + w_l1 * (l1 * inv_n);
  return res;
}

template struct DecoderParams<float>;
template struct DecoderParams<double>;
template DecoderParams<float> init_decoder<float>(const DecoderArch&, uint64_t);
template DecoderParams<double> init_decoder<double>(const DecoderArch&, uint64_t);
template Volume<float> decoder_forward<float>(const DecoderParams<float>&,
                                              const Image<float>&,
                                              ForwardCache<float>*);
template Volume<double> decoder_forward<double>(const DecoderParams<double>&,
                                                const Image<double>&,
                                                ForwardCache<double>*);
template DecoderGrads<float> decoder_backward<float>(
    const DecoderParams<float>&, const ForwardCache<float>&,
    const Volume<float>&);
template DecoderGrads<double> decoder_backward<double>(
    const DecoderParams<double>&, const ForwardCache<double>&,
    const Volume<double>&);
template LossResult<float> loss_eval<float>(const Volume<float>&,
                                            const Volume<float>&, double,
                                            double);
template LossResult<double> loss_eval<double>(const Volume<double>&,
                                              const Volume<double>&, double,
                                              double);

}  // namespace smlm3d
