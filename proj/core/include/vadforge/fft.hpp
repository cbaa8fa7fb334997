#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace vadforge::dsp {

/// In-place radix-2 FFT with precomputed twiddles. Size must be a power of two.
class Fft {
 public:
  explicit Fft(std::size_t size);

  std::size_t size() const noexcept { return size_; }
  void forward(std::span<std::complex<double>> data) const;
  void inverse(std::span<std::complex<double>> data) const;  // scaled by 1/N

 private:
  void transform(std::span<std::complex<double>> data, bool inverse) const;

  std::size_t size_;
  std::vector<std::complex<double>> twiddles_;
  std::vector<std::size_t> bit_reverse_;
};

std::size_t next_pow2(std::size_t n);

/// Full linear convolution via zero-padded FFT; result has a.size()+b.size()-1 samples.
std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b);

}  // namespace vadforge::dsp
