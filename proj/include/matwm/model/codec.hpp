#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "matwm/core/conv.hpp"
#include "matwm/core/nn.hpp"
#include "matwm/core/numerics.hpp"
#include "matwm/core/ops.hpp"

namespace matwm {

struct CodecConfig {
  bool image = false;
  int obs_dim = 0;                       // vector modality
  int img_c = 0, img_h = 0, img_w = 0;   // image modality
  int num_vars = 32, num_classes = 32;
  bool symlog_obs = true;                // vector path only; images stay raw
  int mlp_width = 512, mlp_layers = 3;
  int cnn_base = 32, cnn_layers = 4, cnn_kernel = 4, cnn_stride = 2;

  int latent_dim() const { return num_vars * num_classes; }
};

// Observation encoder/decoder around the categorical latent grid.
// Vector observations go through a symlog transform (optional) and an MLP;
// image observations go through a stride-2 CNN whose decoder mirrors it with
// transposed convolutions. The encoder head is zero-initialised so the latent
// starts uniform, which keeps the initial KL terms at their free-bits floor.
template <typename T>
class Codec {
 public:
  CodecConfig cfg;

  Codec(const CodecConfig& c, Rng& rng) : cfg(c) {
    if (cfg.num_vars < 1 || cfg.num_classes < 2)
      throw std::invalid_argument("codec: latent grid must be at least 1x2");
    if (!cfg.image) {
      if (cfg.obs_dim < 1) throw std::invalid_argument("codec: obs_dim must be positive");
      enc_mlp_.emplace(cfg.obs_dim, cfg.mlp_width, cfg.mlp_layers, cfg.latent_dim(), rng, true);
      dec_mlp_.emplace(cfg.latent_dim(), cfg.mlp_width, cfg.mlp_layers, cfg.obs_dim, rng, false);
      return;
    }
    if (cfg.cnn_stride != 2 || cfg.cnn_kernel != 4)
      throw std::invalid_argument("codec: CNN path is built for kernel 4 / stride 2");
    int shrink = 1 << cfg.cnn_layers;
    if (cfg.img_h % shrink != 0 || cfg.img_w % shrink != 0 || cfg.img_h < shrink || cfg.img_w < shrink)
      throw std::invalid_argument("codec: image sides must be divisible by 2^cnn_layers");
    hf_ = cfg.img_h / shrink;
    wf_ = cfg.img_w / shrink;
    int cin = cfg.img_c;
    for (int l = 0; l < cfg.cnn_layers; ++l) {
      int cout = cfg.cnn_base << l;
      enc_conv_.push_back(make_conv(cout, cin, rng));
      cin = cout;
    }
    cf_ = cin;
    enc_head_.emplace(cf_ * hf_ * wf_, cfg.latent_dim(), rng, true);
    dec_head_.emplace(cfg.latent_dim(), cf_ * hf_ * wf_, rng, false);
    cin = cf_;
    for (int l = cfg.cnn_layers - 1; l >= 0; --l) {
      int cout = l == 0 ? cfg.img_c : (cfg.cnn_base << (l - 1));
      dec_conv_.push_back(make_conv_t(cin, cout, rng));
      cin = cout;
    }
  }

  // obs -> latent logits [B, num_vars*num_classes].
  Var<T> encode(const Var<T>& obs) const {
    if (!cfg.image) return enc_mlp_->forward(prep_var(obs));
    Var<T> x = obs;
    for (const auto& l : enc_conv_)
      x = silu(conv2d(x, l.w, l.b, cfg.cnn_kernel, cfg.cnn_stride, kPad));
    return enc_head_->forward(reshape(x, {x.val().dim(0), cf_ * hf_ * wf_}));
  }

  Tensor<T> encode_value(const Tensor<T>& obs) const {
    if (!cfg.image) return enc_mlp_->forward_value(prep_tensor(obs));
    return encode(constant(obs)).val();  // throwaway tape; image path only
  }

  // one-hot latent sample [B, num_vars*num_classes] -> reconstruction.
  Var<T> decode(const Var<T>& z) const {
    if (!cfg.image) return dec_mlp_->forward(z);
    Var<T> x = silu(dec_head_->forward(z));
    x = reshape(x, {z.val().dim(0), cf_, hf_, wf_});
    for (size_t i = 0; i < dec_conv_.size(); ++i) {
      x = conv_transpose2d(x, dec_conv_[i].w, dec_conv_[i].b, cfg.cnn_kernel, cfg.cnn_stride, kPad);
      if (i + 1 < dec_conv_.size()) x = silu(x);
    }
    return x;
  }

  Tensor<T> decode_value(const Tensor<T>& z) const {
    if (!cfg.image) return dec_mlp_->forward_value(z);
    return decode(constant(z)).val();
  }

  // Mean squared element error against the (possibly symlog) target.
  Var<T> reconstruction_loss(const Var<T>& recon, const Tensor<T>& obs) const {
    return mean_all(square(sub(recon, constant(prep_tensor(obs)))));
  }

  // Decoder outputs live in the same space the loss compares in.
  Tensor<T> postprocess(const Tensor<T>& recon) const {
    if (cfg.image || !cfg.symlog_obs) return recon;
    Tensor<T> out = recon;
    for (auto& v : out.storage()) v = symexp(v);
    return out;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    if (!cfg.image) {
      enc_mlp_->collect(out, prefix + ".enc");
      dec_mlp_->collect(out, prefix + ".dec");
      return;
    }
    for (size_t i = 0; i < enc_conv_.size(); ++i) {
      out.add(prefix + ".enc.conv" + std::to_string(i) + ".w", enc_conv_[i].w);
      out.add(prefix + ".enc.conv" + std::to_string(i) + ".b", enc_conv_[i].b);
    }
    enc_head_->collect(out, prefix + ".enc.head");
    dec_head_->collect(out, prefix + ".dec.head");
    for (size_t i = 0; i < dec_conv_.size(); ++i) {
      out.add(prefix + ".dec.conv" + std::to_string(i) + ".w", dec_conv_[i].w);
      out.add(prefix + ".dec.conv" + std::to_string(i) + ".b", dec_conv_[i].b);
    }
  }

 private:
  static constexpr int kPad = 1;

  struct ConvLayer {
    Var<T> w, b;
  };
  ConvLayer make_conv(int cout, int cin, Rng& rng) const {
    T bound = T(1) / std::sqrt(T(cin * cfg.cnn_kernel * cfg.cnn_kernel));
    return {variable(uniform_init<T>({cout, cin * cfg.cnn_kernel * cfg.cnn_kernel}, bound, rng)),
            variable(uniform_init<T>({cout}, bound, rng))};
  }
  ConvLayer make_conv_t(int cin, int cout, Rng& rng) const {
    T bound = T(1) / std::sqrt(T(cin * cfg.cnn_kernel * cfg.cnn_kernel));
    return {variable(uniform_init<T>({cin, cout * cfg.cnn_kernel * cfg.cnn_kernel}, bound, rng)),
            variable(uniform_init<T>({cout}, bound, rng))};
  }

  Tensor<T> prep_tensor(const Tensor<T>& obs) const {
    if (cfg.image || !cfg.symlog_obs) return obs;
    Tensor<T> out = obs;
    for (auto& v : out.storage()) v = symlog(v);
    return out;
  }
  Var<T> prep_var(const Var<T>& obs) const {
    // Observations enter as data, not as differentiable signals.
    return constant(prep_tensor(obs.val()));
  }

  std::optional<Mlp<T>> enc_mlp_, dec_mlp_;
  std::vector<ConvLayer> enc_conv_, dec_conv_;
  std::optional<Linear<T>> enc_head_, dec_head_;
  int cf_ = 0, hf_ = 0, wf_ = 0;
};

// Row-wise categorical sampling over a [B, V*C] logit grid, straight-through
// gradients. Returns one-hot [B, V*C].
template <typename T>
Var<T> latent_sample(const Var<T>& logits, int num_vars, int num_classes, Rng& rng) {
  int b = logits.val().dim(0);
  auto rows = reshape(logits, {b * num_vars, num_classes});
  return reshape(straight_through_sample(rows, rng), {b, num_vars * num_classes});
}

template <typename T>
Tensor<T> latent_sample_value(const Tensor<T>& logits, int num_vars, int num_classes, Rng& rng) {
  int b = logits.dim(0);
  Tensor<T> out({b, num_vars * num_classes});
  std::vector<T> probs(num_classes);
  for (int r = 0; r < b * num_vars; ++r) {
    const T* row = logits.data() + (size_t)r * num_classes;
    T mx = row[0];
    for (int c = 1; c < num_classes; ++c) mx = std::max(mx, row[c]);
    T sum = T(0);
    for (int c = 0; c < num_classes; ++c) {
      probs[c] = std::exp(row[c] - mx);
      sum += probs[c];
    }
    for (auto& p : probs) p /= sum;
    int k = (int)rng.categorical(std::span<const T>(probs.data(), probs.size()));
    out.data()[(size_t)r * num_classes + k] = T(1);
  }
  return out;
}

template <typename T>
std::vector<int> latent_argmax(const Tensor<T>& logits_or_onehot, int num_vars, int num_classes) {
  int b = logits_or_onehot.dim(0);
  std::vector<int> out((size_t)b * num_vars);
  for (int r = 0; r < b * num_vars; ++r) {
    const T* row = logits_or_onehot.data() + (size_t)r * num_classes;
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (row[c] > row[best]) best = c;
    out[r] = best;
  }
  return out;
}

}  // namespace matwm
