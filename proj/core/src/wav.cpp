#include "vadforge/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "vadforge/error.hpp"

namespace vadforge::dsp {
namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCode::kInput, name + ": not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) fail(ErrorCode::kInput, name + ": truncated chunk");
    if (std::memcmp(&bytes[pos], "fmt ", 4) == 0) {
      if (size < 16) fail(ErrorCode::kInput, name + ": malformed fmt chunk");
      format = read_u16(&bytes[body]);
      channels = read_u16(&bytes[body + 2]);
      rate = read_u32(&bytes[body + 4]);
      bits = read_u16(&bytes[body + 14]);
      have_fmt = true;
    } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
      if (!have_fmt) fail(ErrorCode::kInput, name + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16 || channels != 1) {
        fail(ErrorCode::kInput, name + ": only 16-bit PCM mono is supported (format " +
                                    std::to_string(format) + ", " + std::to_string(bits) +
                                    " bits, " + std::to_string(channels) + " channels)");
      }
      Waveform w;
      w.sample_rate = int(rate);
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = std::int16_t(read_u16(&bytes[body + 2 * i]));
        w.samples[i] = float(v) / 32768.0f;
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  fail(ErrorCode::kInput, name + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  const auto data_bytes = std::uint32_t(wave.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, std::uint32_t(wave.sample_rate));
  put_u32(out, std::uint32_t(wave.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (float s : wave.samples) {
    const double q = std::clamp(std::round(double(s) * 32768.0), -32768.0, 32767.0);
    put_u16(out, std::uint16_t(std::int16_t(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot write " + path.string());
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) fail(ErrorCode::kIo, "short write to " + path.string());
}

Waveform resample(const Waveform& wave, int target_rate) {
  if (wave.sample_rate <= 0 || target_rate <= 0) {
    fail(ErrorCode::kParameter, "sample rates must be positive");
  }
  if (wave.sample_rate == target_rate) return wave;
  const int g = std::gcd(wave.sample_rate, target_rate);
  const std::size_t up = std::size_t(target_rate / g);
  const std::size_t down = std::size_t(wave.sample_rate / g);
  // Low-pass at the narrower of the two Nyquist bands, designed at the upsampled rate.
  const double cutoff = 0.5 / double(std::max(up, down)) * 0.9;
  const std::size_t half = 16 * std::max(up, down);
  const std::size_t taps = 2 * half + 1;
  std::vector<double> h(taps);
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = double(i) - double(half);
    const double sinc = t == 0.0 ? 2.0 * cutoff
                                 : std::sin(2.0 * std::numbers::pi * cutoff * t) / (std::numbers::pi * t);
    const double win = 0.42 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(taps - 1)) +
                       0.08 * std::cos(4.0 * std::numbers::pi * double(i) / double(taps - 1));
    h[i] = sinc * win * double(up);
  }
  const std::size_t n_in = wave.samples.size();
  const std::size_t n_out = (n_in * up + down - 1) / down;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  // Output m sits at upsampled index m*down; only taps aligned with real input samples contribute.
  for (std::size_t m = 0; m < n_out; ++m) {
    const long center = long(m * down);
    double acc = 0.0;
    const long t_lo = center - long(half);
    const long t_hi = center + long(half);
    long first = t_lo <= 0 ? 0 : (t_lo + long(up) - 1) / long(up) * long(up);
    for (long t = first; t <= t_hi; t += long(up)) {
      const std::size_t src = std::size_t(t) / up;
      if (src >= n_in) break;
      acc += h[std::size_t(center - t + long(half))] * wave.samples[src];
    }
    out.samples[m] = float(acc);
  }
  return out;
}

}  // namespace vadforge::dsp
