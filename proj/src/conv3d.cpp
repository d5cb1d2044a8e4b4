#include "bvxl/conv3d.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace bvxl {

Extent3 ConvSpec::output_extent(const Extent3& input) const {
  static constexpr const char* kAxis[3] = {"depth", "height", "width"};
  Extent3 out{};
  for (int ax = 0; ax < 3; ++ax) {
    const long long e = static_cast<long long>(input[ax]) + 2LL * static_cast<long long>(padding) -
                        2LL * static_cast<long long>(dilation * kernel_bounds[ax]);
    if (e <= 0)
      throw ShapeError(std::string("dilated_conv3d: non-positive output extent along ") + kAxis[ax] + " axis (input " +
                       std::to_string(input[ax]) + ", padding " + std::to_string(padding) + ", dilation " +
                       std::to_string(dilation) + ", bound " + std::to_string(kernel_bounds[ax]) + ")");
    out[ax] = static_cast<std::size_t>(e);
  }
  return out;
}

Extent3 receptive_field(std::span<const ConvSpec> specs) {
  Extent3 rf{1, 1, 1};
  for (const auto& s : specs)
    for (int ax = 0; ax < 3; ++ax) rf[ax] += 2 * s.dilation * s.kernel_bounds[ax];
  return rf;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::OuterStride<>;

constexpr std::size_t kColumnBudget = std::size_t{1} << 18;  // elements per column chunk

struct Geometry {
  std::size_t cin, f;
  Extent3 in, out, kext, bounds;
  std::size_t dilation, padding;
  std::size_t taps() const { return kext[0] * kext[1] * kext[2]; }
  std::size_t rows() const { return cin * taps(); }
  std::size_t in_plane() const { return in[1] * in[2]; }
  std::size_t in_voxels() const { return in[0] * in_plane(); }
  std::size_t out_plane() const { return out[1] * out[2]; }
  std::size_t out_voxels() const { return out[0] * out_plane(); }
  // Signed input offset for kernel index k along an axis: l * (2a - k) - p.
  long long offset(int ax, std::size_t k) const {
    return static_cast<long long>(dilation) * (2 * static_cast<long long>(bounds[ax]) - static_cast<long long>(k)) -
           static_cast<long long>(padding);
  }
  // The 1^3, unpadded case reads the input directly as its own column matrix.
  bool pointwise() const { return taps() == 1 && padding == 0; }
  std::size_t chunk_depth() const {
    const std::size_t per_slice = rows() * out_plane();
    return std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_slice, 1), 1, out[0]);
  }
};

// Fills col[rows, (z1 - z0) * out_plane] for output depth slices [z0, z1).
template <typename T>
void im2col(const Geometry& g, const T* input, std::size_t z0, std::size_t z1, T* col) {
  const std::size_t ncols = (z1 - z0) * g.out_plane();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* src = input + c * g.in_voxels();
    for (std::size_t kz = 0; kz < g.kext[0]; ++kz)
      for (std::size_t ky = 0; ky < g.kext[1]; ++ky)
        for (std::size_t kx = 0; kx < g.kext[2]; ++kx, ++row) {
          T* dst = col + row * ncols;
          const long long oz_off = g.offset(0, kz), oy_off = g.offset(1, ky), ox_off = g.offset(2, kx);
          const long long x_lo = std::max<long long>(0, -ox_off);
          const long long x_hi = std::min<long long>(static_cast<long long>(g.out[2]),
                                                     static_cast<long long>(g.in[2]) - ox_off);
          for (std::size_t oz = z0; oz < z1; ++oz) {
            const long long iz = static_cast<long long>(oz) + oz_off;
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              T* d = dst + (oz - z0) * g.out_plane() + oy * g.out[2];
              const long long iy = static_cast<long long>(oy) + oy_off;
              if (iz < 0 || iz >= static_cast<long long>(g.in[0]) || iy < 0 ||
                  iy >= static_cast<long long>(g.in[1]) || x_lo >= x_hi) {
                std::fill(d, d + g.out[2], T(0));
                continue;
              }
              const T* s = src + static_cast<std::size_t>(iz) * g.in_plane() + static_cast<std::size_t>(iy) * g.in[2];
              std::fill(d, d + x_lo, T(0));
              std::memcpy(d + x_lo, s + (x_lo + ox_off), static_cast<std::size_t>(x_hi - x_lo) * sizeof(T));
              std::fill(d + x_hi, d + g.out[2], T(0));
            }
          }
        }
  }
}

// Adjoint of im2col: scatters col back into the input gradient.
template <typename T>
void col2im(const Geometry& g, const T* col, std::size_t z0, std::size_t z1, T* input_grad) {
  const std::size_t ncols = (z1 - z0) * g.out_plane();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* dst = input_grad + c * g.in_voxels();
    for (std::size_t kz = 0; kz < g.kext[0]; ++kz)
      for (std::size_t ky = 0; ky < g.kext[1]; ++ky)
        for (std::size_t kx = 0; kx < g.kext[2]; ++kx, ++row) {
          const T* src = col + row * ncols;
          const long long oz_off = g.offset(0, kz), oy_off = g.offset(1, ky), ox_off = g.offset(2, kx);
          const long long x_lo = std::max<long long>(0, -ox_off);
          const long long x_hi = std::min<long long>(static_cast<long long>(g.out[2]),
                                                     static_cast<long long>(g.in[2]) - ox_off);
          if (x_lo >= x_hi) continue;
          for (std::size_t oz = z0; oz < z1; ++oz) {
            const long long iz = static_cast<long long>(oz) + oz_off;
            if (iz < 0 || iz >= static_cast<long long>(g.in[0])) continue;
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const long long iy = static_cast<long long>(oy) + oy_off;
              if (iy < 0 || iy >= static_cast<long long>(g.in[1])) continue;
              const T* s = src + (oz - z0) * g.out_plane() + oy * g.out[2];
              T* d = dst + static_cast<std::size_t>(iz) * g.in_plane() + static_cast<std::size_t>(iy) * g.in[2];
              for (long long x = x_lo; x < x_hi; ++x) d[x + ox_off] += s[x];
            }
          }
        }
  }
}

template <typename T>
Geometry make_geometry(const char* op, const BasicTensor<T>& input, const BasicTensor<T>& weights,
                       const ConvSpec& spec) {
  if (input.ndim() != 4 || input.dim(0) != spec.in_channels)
    throw ShapeError(std::string(op) + ": input " + shape_string(input.shape()) + " does not match " +
                     std::to_string(spec.in_channels) + " input channels x D x H x W");
  if (weights.shape() != spec.weight_shape())
    throw ShapeError(std::string(op) + ": weights " + shape_string(weights.shape()) + " expected " +
                     shape_string(spec.weight_shape()));
  if (spec.dilation == 0) throw ConfigError(std::string(op) + ": dilation must be positive");
  Geometry g{};
  g.cin = spec.in_channels;
  g.f = spec.out_channels;
  g.in = {input.dim(1), input.dim(2), input.dim(3)};
  g.out = spec.output_extent(g.in);
  g.kext = spec.kernel_extent();
  g.bounds = spec.kernel_bounds;
  g.dilation = spec.dilation;
  g.padding = spec.padding;
  return g;
}

}  // namespace

template <typename T>
BasicTensor<T> dilated_conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                              const ConvSpec& spec) {
  const Geometry g = make_geometry("dilated_conv3d", input, weights, spec);
  if (bias.defined() && bias.numel() != spec.out_channels)
    throw ShapeError("dilated_conv3d: bias " + shape_string(bias.shape()) + " expected [" +
                     std::to_string(spec.out_channels) + "]");

  const std::size_t vo = g.out_voxels();
  const std::size_t rows = g.rows();
  std::vector<T> out(g.f * vo, T(0));
  {
    Eigen::Map<const RowMat<T>> w(weights.values().data(), g.f, rows);
    if (g.pointwise()) {
      Eigen::Map<const RowMat<T>> col(input.values().data(), rows, vo);
      Eigen::Map<RowMat<T>>(out.data(), g.f, vo).noalias() = w * col;
    } else {
      const std::size_t step = g.chunk_depth();
      std::vector<T> col(rows * step * g.out_plane());
      for (std::size_t z0 = 0; z0 < g.out[0]; z0 += step) {
        const std::size_t z1 = std::min(g.out[0], z0 + step);
        const std::size_t ncols = (z1 - z0) * g.out_plane();
        im2col(g, input.values().data(), z0, z1, col.data());
        Eigen::Map<const RowMat<T>> colm(col.data(), rows, ncols);
        Eigen::Map<RowMat<T>, 0, Stride> o(out.data() + z0 * g.out_plane(), g.f, ncols, Stride(vo));
        o.noalias() = w * colm;
      }
    }
  }
  if (bias.defined()) {
    auto b = bias.values();
    for (std::size_t f = 0; f < g.f; ++f)
      for (std::size_t v = 0; v < vo; ++v) out[f * vo + v] += b[f];
  }

  std::vector<BasicTensor<T>> parents{input, weights};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return BasicTensor<T>::make_result(
      Shape{g.f, g.out[0], g.out[1], g.out[2]}, std::move(out), std::move(parents),
      [g, has_bias](TensorNode<T>& self) {
        TensorNode<T>& pin = *self.parents[0];
        TensorNode<T>& pw = *self.parents[1];
        const std::size_t vo = g.out_voxels();
        const std::size_t rows = g.rows();
        Eigen::Map<const RowMat<T>> w(pw.values.data(), g.f, rows);
        Eigen::Map<const RowMat<T>> dout_all(self.grad.data(), g.f, vo);

        if (has_bias) {
          TensorNode<T>& pb = *self.parents[2];
          if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t f = 0; f < g.f; ++f) {
              double s = 0;
              for (std::size_t v = 0; v < vo; ++v) s += self.grad[f * vo + v];
              gb[f] += static_cast<T>(s);
            }
          }
        }
        if (!pin.requires_grad && !pw.requires_grad) return;

        if (g.pointwise()) {
          Eigen::Map<const RowMat<T>> col(pin.values.data(), rows, vo);
          if (pw.requires_grad) Eigen::Map<RowMat<T>>(pw.grad_buffer().data(), g.f, rows).noalias() += dout_all * col.transpose();
          if (pin.requires_grad)
            Eigen::Map<RowMat<T>>(pin.grad_buffer().data(), rows, vo).noalias() += w.transpose() * dout_all;
          return;
        }

        const std::size_t step = g.chunk_depth();
        std::vector<T> col(rows * step * g.out_plane());
        for (std::size_t z0 = 0; z0 < g.out[0]; z0 += step) {
          const std::size_t z1 = std::min(g.out[0], z0 + step);
          const std::size_t ncols = (z1 - z0) * g.out_plane();
          Eigen::Map<const RowMat<T>, 0, Stride> dout(self.grad.data() + z0 * g.out_plane(), g.f, ncols, Stride(vo));
          if (pw.requires_grad) {
            im2col(g, pin.values.data(), z0, z1, col.data());
            Eigen::Map<const RowMat<T>> colm(col.data(), rows, ncols);
            Eigen::Map<RowMat<T>>(pw.grad_buffer().data(), g.f, rows).noalias() += dout * colm.transpose();
          }
          if (pin.requires_grad) {
            Eigen::Map<RowMat<T>> dcol(col.data(), rows, ncols);
            dcol.noalias() = w.transpose() * dout;
            col2im(g, col.data(), z0, z1, pin.grad_buffer().data());
          }
        }
      });
}

template <typename T>
BasicTensor<T> conv3d_gaussian_sample(const BasicTensor<T>& input, const BasicTensor<T>& w_mean,
                                      const BasicTensor<T>& w_var, const ConvSpec& spec, std::vector<T> noise) {
  const Geometry g = make_geometry("conv3d_gaussian_sample", input, w_mean, spec);
  if (w_var.shape() != w_mean.shape())
    throw ShapeError("conv3d_gaussian_sample: variance weights " + shape_string(w_var.shape()) + " expected " +
                     shape_string(w_mean.shape()));
  const std::size_t vo = g.out_voxels();
  const std::size_t rows = g.rows();
  if (noise.size() != g.f * vo)
    throw ShapeError("conv3d_gaussian_sample: " + std::to_string(noise.size()) + " noise values for " +
                     std::to_string(g.f * vo) + " outputs");

  // Column chunks of the input and of its square; the pointwise case reads the input in place.
  const std::size_t step = g.pointwise() ? g.out[0] : g.chunk_depth();
  std::vector<T> col(g.pointwise() ? 0 : rows * step * g.out_plane()), col_sq(rows * step * g.out_plane());
  auto fill_columns = [&](const T* in, std::size_t z0, std::size_t z1) -> const T* {
    const std::size_t n = rows * (z1 - z0) * g.out_plane();
    const T* c = in;
    if (!g.pointwise()) {
      im2col(g, in, z0, z1, col.data());
      c = col.data();
    }
    for (std::size_t i = 0; i < n; ++i) col_sq[i] = c[i] * c[i];
    return c;
  };

  std::vector<T> out(g.f * vo), stddev(g.f * vo);
  {
    Eigen::Map<const RowMat<T>> wm(w_mean.values().data(), g.f, rows), wv(w_var.values().data(), g.f, rows);
    for (std::size_t z0 = 0; z0 < g.out[0]; z0 += step) {
      const std::size_t z1 = std::min(g.out[0], z0 + step);
      const std::size_t ncols = (z1 - z0) * g.out_plane();
      const T* c = fill_columns(input.values().data(), z0, z1);
      Eigen::Map<const RowMat<T>> colm(c, rows, ncols), colsq(col_sq.data(), rows, ncols);
      Eigen::Map<RowMat<T>, 0, Stride>(out.data() + z0 * g.out_plane(), g.f, ncols, Stride(vo)).noalias() = wm * colm;
      Eigen::Map<RowMat<T>, 0, Stride>(stddev.data() + z0 * g.out_plane(), g.f, ncols, Stride(vo)).noalias() =
          wv * colsq;
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    stddev[i] = std::sqrt(std::max(stddev[i], T(0)));
    out[i] += stddev[i] * noise[i];
  }

  return BasicTensor<T>::make_result(
      Shape{g.f, g.out[0], g.out[1], g.out[2]}, std::move(out), {input, w_mean, w_var},
      [g, noise = std::move(noise), stddev = std::move(stddev)](TensorNode<T>& self) {
        TensorNode<T>& pin = *self.parents[0];
        TensorNode<T>& pm = *self.parents[1];
        TensorNode<T>& pv = *self.parents[2];
        if (!pin.requires_grad && !pm.requires_grad && !pv.requires_grad) return;
        const std::size_t vo = g.out_voxels();
        const std::size_t rows = g.rows();
        // d out / d var = noise / (2 std); zero where the variance vanished.
        std::vector<T> dvar(self.grad.size());
        for (std::size_t i = 0; i < dvar.size(); ++i)
          dvar[i] = stddev[i] > T(0) ? self.grad[i] * noise[i] / (T(2) * stddev[i]) : T(0);

        Eigen::Map<const RowMat<T>> wm(pm.values.data(), g.f, rows), wv(pv.values.data(), g.f, rows);
        const std::size_t step = g.pointwise() ? g.out[0] : g.chunk_depth();
        std::vector<T> col(g.pointwise() ? 0 : rows * step * g.out_plane()), col_sq(rows * step * g.out_plane()),
            dcol(rows * step * g.out_plane());
        for (std::size_t z0 = 0; z0 < g.out[0]; z0 += step) {
          const std::size_t z1 = std::min(g.out[0], z0 + step);
          const std::size_t ncols = (z1 - z0) * g.out_plane(), n = rows * ncols;
          const T* c = pin.values.data();
          if (!g.pointwise()) {
            im2col(g, pin.values.data(), z0, z1, col.data());
            c = col.data();
          }
          for (std::size_t i = 0; i < n; ++i) col_sq[i] = c[i] * c[i];
          Eigen::Map<const RowMat<T>> colm(c, rows, ncols), colsq(col_sq.data(), rows, ncols);
          Eigen::Map<const RowMat<T>, 0, Stride> dmean(self.grad.data() + z0 * g.out_plane(), g.f, ncols, Stride(vo));
          Eigen::Map<const RowMat<T>, 0, Stride> dv(dvar.data() + z0 * g.out_plane(), g.f, ncols, Stride(vo));
          if (pm.requires_grad)
            Eigen::Map<RowMat<T>>(pm.grad_buffer().data(), g.f, rows).noalias() += dmean * colm.transpose();
          if (pv.requires_grad)
            Eigen::Map<RowMat<T>>(pv.grad_buffer().data(), g.f, rows).noalias() += dv * colsq.transpose();
          if (pin.requires_grad) {
            // d col^2 / d col = 2 col, so both paths share one scatter.
            Eigen::Map<RowMat<T>> dc(dcol.data(), rows, ncols);
            dc.noalias() = wv.transpose() * dv;
            dc.array() *= T(2) * colm.array();
            dc.noalias() += wm.transpose() * dmean;
            if (g.pointwise()) {
              auto& gin = pin.grad_buffer();
              for (std::size_t i = 0; i < n; ++i) gin[i] += dcol[i];
            } else {
              col2im(g, dcol.data(), z0, z1, pin.grad_buffer().data());
            }
          }
        }
      });
}

template BasicTensor<float> dilated_conv3d(const BasicTensor<float>&, const BasicTensor<float>&,
                                           const BasicTensor<float>&, const ConvSpec&);
template BasicTensor<double> dilated_conv3d(const BasicTensor<double>&, const BasicTensor<double>&,
                                            const BasicTensor<double>&, const ConvSpec&);
template BasicTensor<float> conv3d_gaussian_sample(const BasicTensor<float>&, const BasicTensor<float>&,
                                                   const BasicTensor<float>&, const ConvSpec&, std::vector<float>);
template BasicTensor<double> conv3d_gaussian_sample(const BasicTensor<double>&, const BasicTensor<double>&,
                                                    const BasicTensor<double>&, const ConvSpec&, std::vector<double>);

}  // namespace bvxl
