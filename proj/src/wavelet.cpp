#include <algorithm>
#include <cmath>

#include "radfuse/radiomics.hpp"

namespace radfuse {

namespace {

// Normalization for one 2x2x2 block: (1/sqrt2)^3.
const double kScale = 1.0 / (2.0 * std::sqrt(2.0));

int half_up(int n) { return (n + 1) / 2; }

// Edge-replicating read: indices past the end reuse the last slice.
double read_clamped(const Volume& v, int x, int y, int z) {
  const Dims& d = v.dims();
  return v.at(std::min(x, d.nx - 1), std::min(y, d.ny - 1), std::min(z, d.nz - 1));
}

// +1 for the low-pass tap, and for the high-pass first tap; -1 for the high-pass second tap.
double tap(int band_bit, int offset) { return band_bit == 1 && offset == 1 ? -1.0 : 1.0; }

}  // namespace

WaveletBands haar3d(const Volume& vol) {
  const Dims& d = vol.dims();
  const Dims half{half_up(d.nx), half_up(d.ny), half_up(d.nz)};
  const Spacing& s = vol.spacing();
  const Spacing band_spacing{2.0 * s.x, 2.0 * s.y, 2.0 * s.z};
  WaveletBands out;
  out.padded = Dims{2 * half.nx, 2 * half.ny, 2 * half.nz};
  for (int b = 0; b < 8; ++b) {
    const int bx = (b >> 2) & 1, by = (b >> 1) & 1, bz = b & 1;
    Volume band(half, band_spacing, 0.0);
    for (int k = 0; k < half.nz; ++k)
      for (int j = 0; j < half.ny; ++j)
        for (int i = 0; i < half.nx; ++i) {
          double acc = 0.0;
          for (int c = 0; c < 2; ++c)
            for (int bb = 0; bb < 2; ++bb)
              for (int a = 0; a < 2; ++a)
                acc += tap(bx, a) * tap(by, bb) * tap(bz, c) * read_clamped(vol, 2 * i + a, 2 * j + bb, 2 * k + c);
          band.at(i, j, k) = acc * kScale;
        }
    out.bands[static_cast<std::size_t>(b)] = std::move(band);
  }
  return out;
}

Volume haar3d_inverse(const WaveletBands& w) {
  const Dims& half = w.bands[0].dims();
  for (const auto& b : w.bands)
    if (!(b.dims() == half)) throw Error("wavelet bands disagree on dims");
  const Spacing& bs = w.bands[0].spacing();
  Volume out(Dims{2 * half.nx, 2 * half.ny, 2 * half.nz}, Spacing{bs.x / 2, bs.y / 2, bs.z / 2}, 0.0);
  for (int k = 0; k < half.nz; ++k)
    for (int j = 0; j < half.ny; ++j)
      for (int i = 0; i < half.nx; ++i)
        for (int c = 0; c < 2; ++c)
          for (int bb = 0; bb < 2; ++bb)
            for (int a = 0; a < 2; ++a) {
              double acc = 0.0;
              for (int b = 0; b < 8; ++b) {
                const int bx = (b >> 2) & 1, by = (b >> 1) & 1, bz = b & 1;
                acc += tap(bx, a) * tap(by, bb) * tap(bz, c) * w.bands[static_cast<std::size_t>(b)].at(i, j, k);
              }
              out.at(2 * i + a, 2 * j + bb, 2 * k + c) = acc * kScale;
            }
  return out;
}

Mask downsample_mask(const Mask& mask) {
  const Dims& d = mask.dims();
  const Dims half{half_up(d.nx), half_up(d.ny), half_up(d.nz)};
  auto reduce = [&](int threshold) {
    Mask out(half);
    for (int k = 0; k < half.nz; ++k)
      for (int j = 0; j < half.ny; ++j)
        for (int i = 0; i < half.nx; ++i) {
          int on = 0;
          for (int c = 0; c < 2; ++c)
            for (int b = 0; b < 2; ++b)
              for (int a = 0; a < 2; ++a)
                on += mask.at(std::min(2 * i + a, d.nx - 1), std::min(2 * j + b, d.ny - 1),
                              std::min(2 * k + c, d.nz - 1));
          out.set(i, j, k, on >= threshold);
        }
    return out;
  };
  Mask out = reduce(4);
  // Masks thinner than a block vanish under majority; keep any touched block instead.
  if (out.foreground_count() == 0) out = reduce(1);
  return out;
}

}  // namespace radfuse
