#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "megdec/tensor.hpp"

namespace megdec {

// ----------------------------- linear -----------------------------

/// x[B,Din] * W[Dout,Din]^T + b[Dout] -> [B,Dout].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.rank() != 2 || w.rank() != 2) {
        throw DimensionError("linear: expects x[B,Din], w[Dout,Din], got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(1)) {
        throw DimensionError("linear: input width " + std::to_string(x.dim(1)) +
                             " vs weight width " + std::to_string(w.dim(1)));
    }
    if (b.numel() != w.dim(0)) {
        throw DimensionError("linear: bias size " + std::to_string(b.numel()) +
                             " vs output width " + std::to_string(w.dim(0)));
    }
    Index B = x.dim(0), din = x.dim(1), dout = w.dim(0);
    Tensor<S> out = detail::make_uninit<S>({B, dout});
    out.as_matrix(B, dout).noalias() = x.as_matrix(B, din) * w.as_matrix(dout, din).transpose();
    out.as_matrix(B, dout).rowwise() += b.as_matrix(1, dout).row(0);
    auto px = x.node().get();
    auto pw = w.node().get();
    auto pb = b.node().get();
    detail::attach<S>(out, {x, w, b}, [px, pw, pb, B, din, dout](TensorNode<S>& self) {
        CMatMap<S> g(self.grad.data(), B, dout);
        if (px->requires_grad) {
            ArrayX<S> dx(B * din);
            MatMap<S>(dx.data(), B, din).noalias() = g * CMatMap<S>(pw->data.data(), dout, din);
            px->accumulate(dx);
        }
        if (pw->requires_grad) {
            ArrayX<S> dw(dout * din);
            MatMap<S>(dw.data(), dout, din).noalias() =
                g.transpose() * CMatMap<S>(px->data.data(), B, din);
            pw->accumulate(dw);
        }
        if (pb->requires_grad) {
            pb->accumulate(ArrayX<S>(g.colwise().sum().transpose().array()));
        }
    });
    return out;
}

// ----------------------------- convolution -----------------------------

inline Index conv_out_len(Index in, Index k, Index pad, Index stride, const char* op) {
    if (stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
    if (pad < 0) throw ConfigError(std::string(op) + ": padding must be >= 0");
    if (k > in + 2 * pad) {
        throw DimensionError(std::string(op) + ": kernel size " + std::to_string(k) +
                             " exceeds padded input length " + std::to_string(in + 2 * pad));
    }
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

/// im2col for 1-d convolution: x[B,Cin,T] -> cols[B*To, Cin*K].
template <typename S>
RowMatrix<S> im2col_1d(const S* x, Index B, Index Cin, Index T, Index K, Index pad, Index stride,
                       Index To) {
    RowMatrix<S> cols = RowMatrix<S>::Zero(B * To, Cin * K);
    for (Index b = 0; b < B; ++b) {
        for (Index t = 0; t < To; ++t) {
            S* row = cols.data() + (b * To + t) * Cin * K;
            Index base = t * stride - pad;
            for (Index ci = 0; ci < Cin; ++ci) {
                const S* src = x + (b * Cin + ci) * T;
                for (Index kk = 0; kk < K; ++kk) {
                    Index s = base + kk;
                    if (s >= 0 && s < T) row[ci * K + kk] = src[s];
                }
            }
        }
    }
    return cols;
}

/// Scatter-add transpose of im2col_1d: cols grad -> dx[B,Cin,T].
template <typename S>
void col2im_1d(const RowMatrix<S>& dcols, S* dx, Index B, Index Cin, Index T, Index K, Index pad,
               Index stride, Index To) {
    for (Index b = 0; b < B; ++b) {
        for (Index t = 0; t < To; ++t) {
            const S* row = dcols.data() + (b * To + t) * Cin * K;
            Index base = t * stride - pad;
            for (Index ci = 0; ci < Cin; ++ci) {
                S* dst = dx + (b * Cin + ci) * T;
                for (Index kk = 0; kk < K; ++kk) {
                    Index s = base + kk;
                    if (s >= 0 && s < T) dst[s] += row[ci * K + kk];
                }
            }
        }
    }
}

/// im2col for 2-d convolution: x[B,Cin,H,W] -> cols[B*Ho*Wo, Cin*KH*KW].
template <typename S>
RowMatrix<S> im2col_2d(const S* x, Index B, Index Cin, Index H, Index W, Index KH, Index KW,
                       Index pad, Index stride, Index Ho, Index Wo) {
    RowMatrix<S> cols = RowMatrix<S>::Zero(B * Ho * Wo, Cin * KH * KW);
    for (Index b = 0; b < B; ++b) {
        for (Index i = 0; i < Ho; ++i) {
            for (Index j = 0; j < Wo; ++j) {
                S* row = cols.data() + ((b * Ho + i) * Wo + j) * Cin * KH * KW;
                Index hb = i * stride - pad;
                Index wb = j * stride - pad;
                for (Index ci = 0; ci < Cin; ++ci) {
                    const S* src = x + ((b * Cin + ci) * H) * W;
                    for (Index kh = 0; kh < KH; ++kh) {
                        Index h = hb + kh;
                        if (h < 0 || h >= H) continue;
                        for (Index kw = 0; kw < KW; ++kw) {
                            Index w = wb + kw;
                            if (w >= 0 && w < W) row[(ci * KH + kh) * KW + kw] = src[h * W + w];
                        }
                    }
                }
            }
        }
    }
    return cols;
}

template <typename S>
void col2im_2d(const RowMatrix<S>& dcols, S* dx, Index B, Index Cin, Index H, Index W, Index KH,
               Index KW, Index pad, Index stride, Index Ho, Index Wo) {
    for (Index b = 0; b < B; ++b) {
        for (Index i = 0; i < Ho; ++i) {
            for (Index j = 0; j < Wo; ++j) {
                const S* row = dcols.data() + ((b * Ho + i) * Wo + j) * Cin * KH * KW;
                Index hb = i * stride - pad;
                Index wb = j * stride - pad;
                for (Index ci = 0; ci < Cin; ++ci) {
                    S* dst = dx + ((b * Cin + ci) * H) * W;
                    for (Index kh = 0; kh < KH; ++kh) {
                        Index h = hb + kh;
                        if (h < 0 || h >= H) continue;
                        for (Index kw = 0; kw < KW; ++kw) {
                            Index w = wb + kw;
                            if (w >= 0 && w < W) dst[h * W + w] += row[(ci * KH + kh) * KW + kw];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 1-d convolution: x[B,Cin,T], k[Cout,Cin,K], bias[Cout] -> [B,Cout,To].
template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& k, const Tensor<S>& bias, Index stride,
                 Index pad) {
    if (x.rank() != 3 || k.rank() != 3) {
        throw DimensionError("conv1d: expects x[B,Cin,T] and k[Cout,Cin,K], got " +
                             shape_str(x.shape()) + " and " + shape_str(k.shape()));
    }
    if (x.dim(1) != k.dim(1)) {
        throw DimensionError("conv1d: channel mismatch, input has " + std::to_string(x.dim(1)) +
                             ", kernel expects " + std::to_string(k.dim(1)));
    }
    if (bias.numel() != k.dim(0)) {
        throw DimensionError("conv1d: bias size " + std::to_string(bias.numel()) +
                             " vs output channels " + std::to_string(k.dim(0)));
    }
    Index B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
    Index Cout = k.dim(0), K = k.dim(2);
    Index To = conv_out_len(T, K, pad, stride, "conv1d");

    RowMatrix<S> cols = detail::im2col_1d(x.array().data(), B, Cin, T, K, pad, stride, To);
    RowMatrix<S> y(B * To, Cout);  // rows are (b,t), later transposed into [B,Cout,To]
    y.noalias() = cols * CMatMap<S>(k.array().data(), Cout, Cin * K).transpose();
    y.rowwise() += bias.as_matrix(1, Cout).row(0);

    Tensor<S> out = detail::make_uninit<S>({B, Cout, To});
    for (Index b = 0; b < B; ++b) {
        MatMap<S>(out.array().data() + b * Cout * To, Cout, To) =
            y.middleRows(b * To, To).transpose();
    }

    auto px = x.node().get();
    auto pk = k.node().get();
    auto pb = bias.node().get();
    detail::attach<S>(out, {x, k, bias},
                      [px, pk, pb, B, Cin, T, Cout, K, To, stride, pad,
                       cols = std::move(cols)](TensorNode<S>& self) {
                          RowMatrix<S> dy(B * To, Cout);
                          for (Index b = 0; b < B; ++b) {
                              dy.middleRows(b * To, To) =
                                  CMatMap<S>(self.grad.data() + b * Cout * To, Cout, To).transpose();
                          }
                          if (pk->requires_grad) {
                              ArrayX<S> dk(Cout * Cin * K);
                              MatMap<S>(dk.data(), Cout, Cin * K).noalias() = dy.transpose() * cols;
                              pk->accumulate(dk);
                          }
                          if (pb->requires_grad) {
                              pb->accumulate(ArrayX<S>(dy.colwise().sum().transpose().array()));
                          }
                          if (px->requires_grad) {
                              RowMatrix<S> dcols(B * To, Cin * K);
                              dcols.noalias() = dy * CMatMap<S>(pk->data.data(), Cout, Cin * K);
                              ArrayX<S> dx = ArrayX<S>::Zero(B * Cin * T);
                              detail::col2im_1d(dcols, dx.data(), B, Cin, T, K, pad, stride, To);
                              px->accumulate(dx);
                          }
                      });
    return out;
}

/// 2-d convolution: x[B,Cin,H,W], k[Cout,Cin,KH,KW], bias[Cout] -> [B,Cout,Ho,Wo].
/// The same stride and padding apply to both spatial axes.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& k, const Tensor<S>& bias, Index stride,
                 Index pad) {
    if (x.rank() != 4 || k.rank() != 4) {
        throw DimensionError("conv2d: expects x[B,Cin,H,W] and k[Cout,Cin,KH,KW], got " +
                             shape_str(x.shape()) + " and " + shape_str(k.shape()));
    }
    if (x.dim(1) != k.dim(1)) {
        throw DimensionError("conv2d: channel mismatch, input has " + std::to_string(x.dim(1)) +
                             ", kernel expects " + std::to_string(k.dim(1)));
    }
    if (bias.numel() != k.dim(0)) {
        throw DimensionError("conv2d: bias size " + std::to_string(bias.numel()) +
                             " vs output channels " + std::to_string(k.dim(0)));
    }
    Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    Index Cout = k.dim(0), KH = k.dim(2), KW = k.dim(3);
    Index Ho = conv_out_len(H, KH, pad, stride, "conv2d");
    Index Wo = conv_out_len(W, KW, pad, stride, "conv2d");

    RowMatrix<S> cols =
        detail::im2col_2d(x.array().data(), B, Cin, H, W, KH, KW, pad, stride, Ho, Wo);
    RowMatrix<S> y(B * Ho * Wo, Cout);
    y.noalias() = cols * CMatMap<S>(k.array().data(), Cout, Cin * KH * KW).transpose();
    y.rowwise() += bias.as_matrix(1, Cout).row(0);

    Tensor<S> out = detail::make_uninit<S>({B, Cout, Ho, Wo});
    for (Index b = 0; b < B; ++b) {
        MatMap<S>(out.array().data() + b * Cout * Ho * Wo, Cout, Ho * Wo) =
            y.middleRows(b * Ho * Wo, Ho * Wo).transpose();
    }

    auto px = x.node().get();
    auto pk = k.node().get();
    auto pb = bias.node().get();
    detail::attach<S>(out, {x, k, bias},
                      [px, pk, pb, B, Cin, H, W, Cout, KH, KW, Ho, Wo, stride, pad,
                       cols = std::move(cols)](TensorNode<S>& self) {
                          Index hw = Ho * Wo;
                          RowMatrix<S> dy(B * hw, Cout);
                          for (Index b = 0; b < B; ++b) {
                              dy.middleRows(b * hw, hw) =
                                  CMatMap<S>(self.grad.data() + b * Cout * hw, Cout, hw).transpose();
                          }
                          if (pk->requires_grad) {
                              ArrayX<S> dk(Cout * Cin * KH * KW);
                              MatMap<S>(dk.data(), Cout, Cin * KH * KW).noalias() =
                                  dy.transpose() * cols;
                              pk->accumulate(dk);
                          }
                          if (pb->requires_grad) {
                              pb->accumulate(ArrayX<S>(dy.colwise().sum().transpose().array()));
                          }
                          if (px->requires_grad) {
                              RowMatrix<S> dcols(B * hw, Cin * KH * KW);
                              dcols.noalias() = dy * CMatMap<S>(pk->data.data(), Cout, Cin * KH * KW);
                              ArrayX<S> dx = ArrayX<S>::Zero(B * Cin * H * W);
                              detail::col2im_2d(dcols, dx.data(), B, Cin, H, W, KH, KW, pad, stride,
                                                Ho, Wo);
                              px->accumulate(dx);
                          }
                      });
    return out;
}

// ----------------------------- normalization -----------------------------

namespace detail {

/// Shared backward for (x - mean) / sqrt(var + eps) over independent rows,
/// given xhat and 1/sqrt(var+eps) per row:
///   dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
template <typename S>
void standardize_rows_backward(const S* dxhat, const S* xhat, const S* inv_std, Index rows,
                               Index cols, S* dx) {
    for (Index r = 0; r < rows; ++r) {
        Eigen::Map<const ArrayX<S>> g(dxhat + r * cols, cols);
        Eigen::Map<const ArrayX<S>> xh(xhat + r * cols, cols);
        S gm = g.mean();
        S gxm = (g * xh).mean();
        Eigen::Map<ArrayX<S>>(dx + r * cols, cols) = inv_std[r] * (g - gm - xh * gxm);
    }
}

}  // namespace detail

/// Standardizes each trailing-axis slice to zero mean and unit variance,
/// with no learned affine part. For x[B,C,T] this is per window, per
/// channel over time; any rank >= 2 works the same way on the last axis.
template <typename S>
Tensor<S> instance_norm(const Tensor<S>& x, S eps = S(1e-5)) {
    if (x.rank() < 2) throw DimensionError("instance_norm: expects rank >= 2, got " + shape_str(x.shape()));
    Index cols = x.dim(size_t(x.rank() - 1));
    Index rows = x.numel() / cols;
    Tensor<S> out = detail::make_uninit<S>(x.shape());
    ArrayX<S> inv_std(rows);
    for (Index r = 0; r < rows; ++r) {
        Eigen::Map<const ArrayX<S>> xr(x.array().data() + r * cols, cols);
        S mean = xr.mean();
        S var = (xr - mean).square().mean();
        inv_std[r] = S(1) / std::sqrt(var + eps);
        Eigen::Map<ArrayX<S>>(out.array().data() + r * cols, cols) = (xr - mean) * inv_std[r];
    }
    auto px = x.node().get();
    // the output itself is xhat, so the backward reads self.data
    detail::attach<S>(out, {x},
                      [px, rows, cols, inv_std = std::move(inv_std)](TensorNode<S>& self) {
                          ArrayX<S> dx(rows * cols);
                          detail::standardize_rows_backward(self.grad.data(), self.data.data(),
                                                            inv_std.data(), rows, cols, dx.data());
                          px->accumulate(dx);
                      });
    return out;
}

/// Group norm over x[B,C,T]: channels are split into `groups` equal groups,
/// each normalized over its (C/groups * T) elements, then scaled and shifted
/// per channel by gamma and beta. groups == 1 is layer norm over (C,T);
/// groups == C normalizes each channel alone.
template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     Index groups, S eps = S(1e-5)) {
    if (x.rank() != 3) throw DimensionError("group_norm: expects x[B,C,T], got " + shape_str(x.shape()));
    Index B = x.dim(0), C = x.dim(1), T = x.dim(2);
    if (groups < 1 || C % groups != 0) {
        throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                          std::to_string(C) + " channels");
    }
    if (gamma.numel() != C || beta.numel() != C) {
        throw DimensionError("group_norm: gamma/beta must have one entry per channel");
    }
    Index cg = C / groups;      // channels per group
    Index gn = cg * T;          // elements per group
    Tensor<S> out = detail::make_uninit<S>(x.shape());
    ArrayX<S> xhat(x.numel());
    ArrayX<S> inv_std(B * groups);
    for (Index b = 0; b < B; ++b) {
        for (Index g = 0; g < groups; ++g) {
            Index off = (b * C + g * cg) * T;
            Eigen::Map<const ArrayX<S>> xg(x.array().data() + off, gn);
            S mean = xg.mean();
            S var = (xg - mean).square().mean();
            S is = S(1) / std::sqrt(var + eps);
            inv_std[b * groups + g] = is;
            Eigen::Map<ArrayX<S>>(xhat.data() + off, gn) = (xg - mean) * is;
        }
        for (Index c = 0; c < C; ++c) {
            Index off = (b * C + c) * T;
            Eigen::Map<ArrayX<S>>(out.array().data() + off, T) =
                Eigen::Map<const ArrayX<S>>(xhat.data() + off, T) * gamma.array()[c] +
                beta.array()[c];
        }
    }
    auto px = x.node().get();
    auto pg = gamma.node().get();
    auto pb = beta.node().get();
    detail::attach<S>(out, {x, gamma, beta},
                      [px, pg, pb, B, C, T, groups, cg, gn, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](TensorNode<S>& self) {
                          if (pg->requires_grad) {
                              ArrayX<S> dg = ArrayX<S>::Zero(C);
                              for (Index b = 0; b < B; ++b)
                                  for (Index c = 0; c < C; ++c) {
                                      Index off = (b * C + c) * T;
                                      dg[c] += (Eigen::Map<const ArrayX<S>>(self.grad.data() + off, T) *
                                                Eigen::Map<const ArrayX<S>>(xhat.data() + off, T))
                                                   .sum();
                                  }
                              pg->accumulate(dg);
                          }
                          if (pb->requires_grad) {
                              ArrayX<S> db = ArrayX<S>::Zero(C);
                              for (Index b = 0; b < B; ++b)
                                  for (Index c = 0; c < C; ++c) {
                                      db[c] += Eigen::Map<const ArrayX<S>>(
                                                   self.grad.data() + (b * C + c) * T, T)
                                                   .sum();
                                  }
                              pb->accumulate(db);
                          }
                          if (px->requires_grad) {
                              // dxhat = grad * gamma (per channel), then the shared
                              // standardization backward per (batch, group) block
                              ArrayX<S> dxhat(self.grad.size());
                              for (Index b = 0; b < B; ++b)
                                  for (Index c = 0; c < C; ++c) {
                                      Index off = (b * C + c) * T;
                                      Eigen::Map<ArrayX<S>>(dxhat.data() + off, T) =
                                          Eigen::Map<const ArrayX<S>>(self.grad.data() + off, T) *
                                          pg->data[c];
                                  }
                              ArrayX<S> dx(self.grad.size());
                              detail::standardize_rows_backward(dxhat.data(), xhat.data(),
                                                                inv_std.data(), B * groups, gn,
                                                                dx.data());
                              px->accumulate(dx);
                          }
                      });
    return out;
}

/// Running first and second moments for batch norm, updated in training
/// passes and consumed in eval passes. Lives outside the tape.
template <typename S>
struct BatchNormState {
    ArrayX<S> running_mean;
    ArrayX<S> running_var;

    static BatchNormState init(Index channels) {
        BatchNormState s;
        s.running_mean = ArrayX<S>::Zero(channels);
        s.running_var = ArrayX<S>::Ones(channels);
        return s;
    }
};

/// Batch norm over x[B,C,T]: per-channel statistics across batch and time.
/// Training uses batch statistics (population variance) and updates the
/// running buffers with momentum; eval normalizes with the running buffers.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     BatchNormState<S>& state, bool training, S momentum = S(0.1),
                     S eps = S(1e-5)) {
    if (x.rank() != 3) throw DimensionError("batch_norm: expects x[B,C,T], got " + shape_str(x.shape()));
    Index B = x.dim(0), C = x.dim(1), T = x.dim(2);
    if (gamma.numel() != C || beta.numel() != C || state.running_mean.size() != C) {
        throw DimensionError("batch_norm: parameter size mismatch for " + std::to_string(C) +
                             " channels");
    }
    ArrayX<S> mean(C), var(C);
    if (training) {
        for (Index c = 0; c < C; ++c) {
            S m = 0, v = 0;
            for (Index b = 0; b < B; ++b) {
                Eigen::Map<const ArrayX<S>> xr(x.array().data() + (b * C + c) * T, T);
                m += xr.sum();
            }
            m /= S(B * T);
            for (Index b = 0; b < B; ++b) {
                Eigen::Map<const ArrayX<S>> xr(x.array().data() + (b * C + c) * T, T);
                v += (xr - m).square().sum();
            }
            v /= S(B * T);
            mean[c] = m;
            var[c] = v;
        }
        state.running_mean = (S(1) - momentum) * state.running_mean + momentum * mean;
        state.running_var = (S(1) - momentum) * state.running_var + momentum * var;
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }
    ArrayX<S> inv_std = (var + eps).sqrt().inverse();
    Tensor<S> out = detail::make_uninit<S>(x.shape());
    ArrayX<S> xhat(x.numel());
    for (Index b = 0; b < B; ++b) {
        for (Index c = 0; c < C; ++c) {
            Index off = (b * C + c) * T;
            Eigen::Map<ArrayX<S>>(xhat.data() + off, T) =
                (Eigen::Map<const ArrayX<S>>(x.array().data() + off, T) - mean[c]) * inv_std[c];
            Eigen::Map<ArrayX<S>>(out.array().data() + off, T) =
                Eigen::Map<const ArrayX<S>>(xhat.data() + off, T) * gamma.array()[c] +
                beta.array()[c];
        }
    }
    auto px = x.node().get();
    auto pg = gamma.node().get();
    auto pb = beta.node().get();
    detail::attach<S>(
        out, {x, gamma, beta},
        [px, pg, pb, B, C, T, training, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](TensorNode<S>& self) {
            Index n = B * T;
            if (pg->requires_grad || pb->requires_grad) {
                ArrayX<S> dg = ArrayX<S>::Zero(C), db = ArrayX<S>::Zero(C);
                for (Index b = 0; b < B; ++b)
                    for (Index c = 0; c < C; ++c) {
                        Index off = (b * C + c) * T;
                        Eigen::Map<const ArrayX<S>> g(self.grad.data() + off, T);
                        dg[c] += (g * Eigen::Map<const ArrayX<S>>(xhat.data() + off, T)).sum();
                        db[c] += g.sum();
                    }
                if (pg->requires_grad) pg->accumulate(dg);
                if (pb->requires_grad) pb->accumulate(db);
            }
            if (px->requires_grad) {
                ArrayX<S> dx(self.grad.size());
                if (training) {
                    // per channel: dx = gamma * inv_std * (g - mean(g) - xhat * mean(g*xhat))
                    for (Index c = 0; c < C; ++c) {
                        S gm = 0, gxm = 0;
                        for (Index b = 0; b < B; ++b) {
                            Index off = (b * C + c) * T;
                            Eigen::Map<const ArrayX<S>> g(self.grad.data() + off, T);
                            gm += g.sum();
                            gxm += (g * Eigen::Map<const ArrayX<S>>(xhat.data() + off, T)).sum();
                        }
                        gm /= S(n);
                        gxm /= S(n);
                        for (Index b = 0; b < B; ++b) {
                            Index off = (b * C + c) * T;
                            Eigen::Map<ArrayX<S>>(dx.data() + off, T) =
                                pg->data[c] * inv_std[c] *
                                (Eigen::Map<const ArrayX<S>>(self.grad.data() + off, T) - gm -
                                 Eigen::Map<const ArrayX<S>>(xhat.data() + off, T) * gxm);
                        }
                    }
                } else {
                    // running stats are constants, so the map is elementwise affine
                    for (Index b = 0; b < B; ++b)
                        for (Index c = 0; c < C; ++c) {
                            Index off = (b * C + c) * T;
                            Eigen::Map<ArrayX<S>>(dx.data() + off, T) =
                                Eigen::Map<const ArrayX<S>>(self.grad.data() + off, T) *
                                (pg->data[c] * inv_std[c]);
                        }
                }
                px->accumulate(dx);
            }
        });
    return out;
}

/// Layer norm over the last axis with learned per-feature gamma and beta:
/// x[..., D] -> same shape.
template <typename S>
Tensor<S> layer_norm_lastdim(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                             S eps = S(1e-5)) {
    if (x.rank() < 2) throw DimensionError("layer_norm_lastdim: expects rank >= 2");
    Index d = x.dim(size_t(x.rank() - 1));
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError("layer_norm_lastdim: gamma/beta size must match last axis " +
                             std::to_string(d));
    }
    Index rows = x.numel() / d;
    Tensor<S> out = detail::make_uninit<S>(x.shape());
    ArrayX<S> xhat(x.numel());
    ArrayX<S> inv_std(rows);
    for (Index r = 0; r < rows; ++r) {
        Eigen::Map<const ArrayX<S>> xr(x.array().data() + r * d, d);
        S mean = xr.mean();
        S var = (xr - mean).square().mean();
        inv_std[r] = S(1) / std::sqrt(var + eps);
        Eigen::Map<ArrayX<S>>(xhat.data() + r * d, d) = (xr - mean) * inv_std[r];
        Eigen::Map<ArrayX<S>>(out.array().data() + r * d, d) =
            Eigen::Map<const ArrayX<S>>(xhat.data() + r * d, d) * gamma.array() + beta.array();
    }
    auto px = x.node().get();
    auto pg = gamma.node().get();
    auto pb = beta.node().get();
    detail::attach<S>(out, {x, gamma, beta},
                      [px, pg, pb, rows, d, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](TensorNode<S>& self) {
                          CMatMap<S> g(self.grad.data(), rows, d);
                          CMatMap<S> xh(xhat.data(), rows, d);
                          if (pg->requires_grad) {
                              pg->accumulate(ArrayX<S>(
                                  (g.array() * xh.array()).colwise().sum().transpose()));
                          }
                          if (pb->requires_grad) {
                              pb->accumulate(ArrayX<S>(g.colwise().sum().transpose().array()));
                          }
                          if (px->requires_grad) {
                              ArrayX<S> dxhat(self.grad.size());
                              MatMap<S>(dxhat.data(), rows, d).array() =
                                  g.array().rowwise() * pg->data.transpose();
                              ArrayX<S> dx(self.grad.size());
                              detail::standardize_rows_backward(dxhat.data(), xhat.data(),
                                                                inv_std.data(), rows, d, dx.data());
                              px->accumulate(dx);
                          }
                      });
    return out;
}

// ----------------------------- softmax and loss -----------------------------

/// Numerically stable softmax over the last axis.
template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
    if (x.rank() < 2) throw DimensionError("softmax_lastdim: expects rank >= 2");
    Index d = x.dim(size_t(x.rank() - 1));
    Index rows = x.numel() / d;
    Tensor<S> out = detail::make_uninit<S>(x.shape());
    for (Index r = 0; r < rows; ++r) {
        Eigen::Map<const ArrayX<S>> xr(x.array().data() + r * d, d);
        Eigen::Map<ArrayX<S>> yr(out.array().data() + r * d, d);
        S m = xr.maxCoeff();
        yr = (xr - m).exp();
        yr /= yr.sum();
    }
    auto px = x.node().get();
    detail::attach<S>(out, {x}, [px, rows, d](TensorNode<S>& self) {
        ArrayX<S> dx(self.grad.size());
        for (Index r = 0; r < rows; ++r) {
            Eigen::Map<const ArrayX<S>> g(self.grad.data() + r * d, d);
            Eigen::Map<const ArrayX<S>> yr(self.data.data() + r * d, d);
            S dot = (g * yr).sum();
            Eigen::Map<ArrayX<S>>(dx.data() + r * d, d) = yr * (g - dot);
        }
        px->accumulate(dx);
    });
    return out;
}

/// Mean cross-entropy between logits[B,C] and integer labels, fused with
/// softmax for stability; backward is (softmax - onehot) / B.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw DimensionError("softmax_cross_entropy: expects logits[B,C], got " +
                             shape_str(logits.shape()));
    }
    Index B = logits.dim(0), C = logits.dim(1);
    if (Index(labels.size()) != B) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for batch of " + std::to_string(B));
    }
    ArrayX<S> probs(B * C);
    S loss = 0;
    for (Index b = 0; b < B; ++b) {
        int lab = labels[size_t(b)];
        if (lab < 0 || lab >= C) {
            throw UsageError("softmax_cross_entropy: label " + std::to_string(lab) +
                             " out of range for " + std::to_string(C) + " classes");
        }
        Eigen::Map<const ArrayX<S>> xr(logits.array().data() + b * C, C);
        Eigen::Map<ArrayX<S>> pr(probs.data() + b * C, C);
        S m = xr.maxCoeff();
        pr = (xr - m).exp();
        S z = pr.sum();
        pr /= z;
        loss += m + std::log(z) - xr[lab];
    }
    loss /= S(B);
    Tensor<S> out = Tensor<S>::from_array({1}, ArrayX<S>::Constant(1, loss));
    auto pl = logits.node().get();
    std::vector<int> labs = labels;
    detail::attach<S>(out, {logits},
                      [pl, B, C, probs = std::move(probs), labs = std::move(labs)](TensorNode<S>& self) {
                          ArrayX<S> dx = probs;
                          for (Index b = 0; b < B; ++b) dx[b * C + labs[size_t(b)]] -= S(1);
                          dx *= self.grad[0] / S(B);
                          pl->accumulate(dx);
                      });
    return out;
}

/// Throws NumericFault if any element is NaN or infinite.
template <typename S>
void check_finite(const Tensor<S>& t, const std::string& what) {
    if (!t.array().isFinite().all()) {
        throw NumericFault(what + ": non-finite values encountered");
    }
}

}  // namespace megdec
