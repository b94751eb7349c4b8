#pragma once

#include <stdexcept>

#include "matwm/core/graph.hpp"
#include "matwm/core/ops.hpp"
#include "matwm/core/tensor.hpp"

namespace matwm {

// Convolutions are implemented by im2col + GEMM. Images are [B, C, H, W]
// row-major; kernels are square with a single stride and symmetric padding.

namespace conv_detail {

inline int conv_out(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// src: one image [C, H, W]; col: [C*k*k, Ho*Wo].
template <typename T>
void im2col(const T* src, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            T* col) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        T* out = col + static_cast<int64_t>(row) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho) {
          const int h = ho * stride - pad + ki;
          for (int wo = 0; wo < Wo; ++wo) {
            const int w = wo * stride - pad + kj;
            out[ho * Wo + wo] = (h >= 0 && h < H && w >= 0 && w < W)
                                    ? src[(static_cast<int64_t>(c) * H + h) * W + w]
                                    : T(0);
          }
        }
      }
}

// Scatter-add transpose of im2col; dst accumulates.
template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            T* dst) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        const T* in = col + static_cast<int64_t>(row) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho) {
          const int h = ho * stride - pad + ki;
          if (h < 0 || h >= H) continue;
          for (int wo = 0; wo < Wo; ++wo) {
            const int w = wo * stride - pad + kj;
            if (w >= 0 && w < W) dst[(static_cast<int64_t>(c) * H + h) * W + w] += in[ho * Wo + wo];
          }
        }
      }
}

}  // namespace conv_detail

// x: [B, Cin, H, W]; weight: [Cout, Cin*k*k]; bias: [Cout]. Returns [B, Cout, Ho, Wo].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int k, int stride,
              int pad) {
  using namespace conv_detail;
  const auto& X = x.val();
  if (X.rank() != 4) throw std::invalid_argument("conv2d: input must be [B,C,H,W]");
  const int B = X.dim(0), Cin = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int Cout = weight.val().rows();
  if (weight.val().cols() != Cin * k * k) throw std::invalid_argument("conv2d: weight shape");
  const int Ho = conv_out(H, k, stride, pad);
  const int Wo = conv_out(W, k, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");
  Tensor<T> out({B, Cout, Ho, Wo});
  Tensor<T> col({Cin * k * k, Ho * Wo});
  const int64_t in_sz = static_cast<int64_t>(Cin) * H * W;
  const int64_t out_sz = static_cast<int64_t>(Cout) * Ho * Wo;
  for (int b = 0; b < B; ++b) {
    im2col(X.data() + b * in_sz, Cin, H, W, k, stride, pad, Ho, Wo, col.data());
    auto Om = out.block_mat(b * out_sz, Cout, Ho * Wo);
    Om.noalias() = weight.val().mat() * col.mat();
    Om.colwise() += bias.val().vec();
  }
  return make_node<T>(std::move(out), {x, weight, bias},
                      [x, weight, bias, B, Cin, H, W, Cout, Ho, Wo, k, stride, pad, in_sz,
                       out_sz](Node<T>& n) {
    Tensor<T> col({Cin * k * k, Ho * Wo});
    Tensor<T> dcol({Cin * k * k, Ho * Wo});
    for (int b = 0; b < B; ++b) {
      auto Gm = n.grad.block_mat(b * out_sz, Cout, Ho * Wo);
      if (weight.requires_grad()) {
        im2col(x.val().data() + b * in_sz, Cin, H, W, k, stride, pad, Ho, Wo, col.data());
        weight.node()->ensure_grad().mat().noalias() += Gm * col.mat().transpose();
      }
      if (bias.requires_grad()) bias.node()->ensure_grad().vec() += Gm.rowwise().sum();
      if (x.requires_grad()) {
        dcol.mat().noalias() = weight.val().mat().transpose() * Gm;
        col2im(dcol.data(), Cin, H, W, k, stride, pad, Ho, Wo,
               x.node()->ensure_grad().data() + b * in_sz);
      }
    }
  });
}

// Transposed convolution (the gradient of conv2d as a forward op).
// x: [B, Cin, H, W]; weight: [Cin, Cout*k*k]; bias: [Cout].
// Returns [B, Cout, Ho, Wo] with Ho = (H-1)*stride - 2*pad + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int k,
                        int stride, int pad) {
  using namespace conv_detail;
  const auto& X = x.val();
  if (X.rank() != 4) throw std::invalid_argument("conv_transpose2d: input must be [B,C,H,W]");
  const int B = X.dim(0), Cin = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (weight.val().rows() != Cin || weight.val().cols() % (k * k) != 0)
    throw std::invalid_argument("conv_transpose2d: weight shape");
  const int Cout = weight.val().cols() / (k * k);
  const int Ho = (H - 1) * stride - 2 * pad + k;
  const int Wo = (W - 1) * stride - 2 * pad + k;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv_transpose2d: empty output");
  Tensor<T> out({B, Cout, Ho, Wo});
  Tensor<T> colT({Cout * k * k, H * W});
  const int64_t in_sz = static_cast<int64_t>(Cin) * H * W;
  const int64_t out_sz = static_cast<int64_t>(Cout) * Ho * Wo;
  for (int b = 0; b < B; ++b) {
    auto Xm = X.block_mat(b * in_sz, Cin, H * W);
    colT.mat().noalias() = weight.val().mat().transpose() * Xm;
    // The output plays the role of conv2d's input: scatter with its geometry.
    col2im(colT.data(), Cout, Ho, Wo, k, stride, pad, H, W, out.data() + b * out_sz);
    auto Om = out.block_mat(b * out_sz, Cout, Ho * Wo);
    Om.colwise() += bias.val().vec();
  }
  return make_node<T>(std::move(out), {x, weight, bias},
                      [x, weight, bias, B, Cin, H, W, Cout, Ho, Wo, k, stride, pad, in_sz,
                       out_sz](Node<T>& n) {
    Tensor<T> gcol({Cout * k * k, H * W});
    for (int b = 0; b < B; ++b) {
      im2col(n.grad.data() + b * out_sz, Cout, Ho, Wo, k, stride, pad, H, W, gcol.data());
      if (weight.requires_grad()) {
        auto Xm = x.val().block_mat(b * in_sz, Cin, H * W);
        weight.node()->ensure_grad().mat().noalias() += Xm * gcol.mat().transpose();
      }
      if (bias.requires_grad())
        bias.node()->ensure_grad().vec() += n.grad.block_mat(b * out_sz, Cout, Ho * Wo).rowwise().sum();
      if (x.requires_grad()) {
        auto dX = x.node()->ensure_grad().block_mat(b * in_sz, Cin, H * W);
        dX.noalias() += weight.val().mat() * gcol.mat();
      }
    }
  });
}

}  // namespace matwm
