#include "vadforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include "vadforge/error.hpp"

namespace vadforge::checkpoint {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

constexpr char kMagic[4] = {'V', 'A', 'D', 'F'};

std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return std::uint32_t(c);
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > n_ - pos_) fail(ErrorCode::kCheckpointTruncated, "checkpoint is truncated");
    const std::uint8_t* out = p_ + pos_;
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

void put_blob(Writer& w, const std::string& name, const Shape& shape, std::span<const float> data) {
  const std::size_t start = w.bytes.size();
  w.put(std::uint32_t(name.size()));
  w.put_bytes(name.data(), name.size());
  w.put(std::uint32_t(shape.size()));
  for (std::size_t d : shape) w.put(std::uint32_t(d));
  w.put(std::uint64_t(data.size()));
  w.put_bytes(data.data(), data.size() * sizeof(float));
  w.put(crc(w.bytes.data() + start, w.bytes.size() - start));
}

struct Blob {
  Shape shape;
  std::vector<float> data;
};

struct Parsed {
  nlohmann::json header;
  std::map<std::string, Blob> blobs;
};

// Walks the body after magic and version. Overruns raise kCheckpointTruncated.
Parsed parse_body(Reader& r, bool verify_blobs, const std::uint8_t* base) {
  Parsed out;
  const auto header_len = r.get<std::uint32_t>();
  const auto* h = r.take(header_len);
  const std::string header_text(reinterpret_cast<const char*>(h), header_len);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.pos();
    const auto name_len = r.get<std::uint32_t>();
    const auto* np = r.take(name_len);
    std::string name(reinterpret_cast<const char*>(np), name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) fail(ErrorCode::kCheckpointChecksum, "checkpoint blob '" + name + "' is corrupt");
    Blob b;
    for (std::uint32_t k = 0; k < rank; ++k) b.shape.push_back(r.get<std::uint32_t>());
    const auto n = r.get<std::uint64_t>();
    if (n > r.remaining() / sizeof(float)) fail(ErrorCode::kCheckpointTruncated, "checkpoint is truncated");
    const auto* dp = r.take(n * sizeof(float));
    const std::size_t end = r.pos();
    const auto stored = r.get<std::uint32_t>();
    if (verify_blobs) {
      if (stored != crc(base + start, end - start)) {
        fail(ErrorCode::kCheckpointChecksum, "checksum mismatch in blob '" + name + "'");
      }
      b.data.resize(n);
      std::memcpy(b.data.data(), dp, n * sizeof(float));
      out.blobs.emplace(std::move(name), std::move(b));
    }
  }
  if (verify_blobs) {
    try {
      out.header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::kCheckpointChecksum, "checkpoint header is not valid JSON");
    }
  }
  return out;
}

void assign(const std::map<std::string, Blob>& blobs, const std::string& name,
            const Tensor<float>& dst) {
  const auto it = blobs.find(name);
  if (it == blobs.end()) fail(ErrorCode::kConfig, "checkpoint is missing tensor '" + name + "'");
  if (it->second.shape != dst.shape()) {
    fail(ErrorCode::kConfig, "checkpoint tensor '" + name + "' has shape " +
                                 shape_str(it->second.shape) + ", model expects " +
                                 shape_str(dst.shape()));
  }
  std::copy(it->second.data.begin(), it->second.data.end(), dst.data().begin());
}

}  // namespace

void save(const std::filesystem::path& path, const model::VadModel<float>& model,
          const dsp::FrontendConfig& frontend, const nlohmann::json& metadata) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put(kFormatVersion);
  const std::string header =
      nlohmann::json{{"model", model.config()}, {"frontend", frontend}, {"metadata", metadata}}.dump();
  w.put(std::uint32_t(header.size()));
  w.put_bytes(header.data(), header.size());
  const auto params = model.parameters();
  const auto buffers = model.buffers();
  const bool stats = frontend.normalization_fitted();
  w.put(std::uint32_t(params.size() + buffers.size() + (stats ? 2 : 0)));
  for (const auto& [name, t] : params) put_blob(w, name, t.shape(), t.data());
  for (const auto& [name, t] : buffers) put_blob(w, name, t.shape(), t.data());
  if (stats) {
    put_blob(w, "frontend.norm_mean", {frontend.norm_mean.size()}, frontend.norm_mean);
    put_blob(w, "frontend.norm_std", {frontend.norm_std.size()}, frontend.norm_std);
  }
  w.put(crc(w.bytes.data(), w.bytes.size()));

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorCode::kIo, "cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes.data()), std::streamsize(w.bytes.size()));
    if (!out) fail(ErrorCode::kIo, "failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot move checkpoint into place: " + ec.message());
}

LoadedModel load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  if (bytes.size() < 4) fail(ErrorCode::kCheckpointTruncated, "checkpoint is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorCode::kCheckpointMagic, path.string() + " is not a vadforge checkpoint");
  }
  if (bytes.size() < 8) fail(ErrorCode::kCheckpointTruncated, "checkpoint is truncated");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kFormatVersion) {
    fail(ErrorCode::kCheckpointVersion, "checkpoint format version " + std::to_string(version) +
                                            " is not supported (expected " +
                                            std::to_string(kFormatVersion) + ")");
  }
  const std::size_t body_end = bytes.size() >= 12 ? bytes.size() - 4 : 8;
  std::uint32_t stored = 0;
  if (bytes.size() >= 12) std::memcpy(&stored, bytes.data() + body_end, 4);
  if (bytes.size() < 12 || stored != crc(bytes.data(), body_end)) {
    // Distinguish a short file from flipped bits by walking the structure.
    Reader probe(bytes.data() + 8, body_end - 8);
    parse_body(probe, false, bytes.data() + 8);
    fail(ErrorCode::kCheckpointChecksum, "checkpoint checksum mismatch in " + path.string());
  }
  Reader r(bytes.data() + 8, body_end - 8);
  Parsed parsed = parse_body(r, true, bytes.data() + 8);
  if (r.remaining() != 0) fail(ErrorCode::kCheckpointChecksum, "trailing bytes in checkpoint");

  LoadedModel out;
  const auto& header = parsed.header;
  const model::ModelConfig mcfg = header.at("model").get<model::ModelConfig>();
  out.frontend = header.at("frontend").get<dsp::FrontendConfig>();
  out.metadata = header.value("metadata", nlohmann::json::object());
  out.model = std::make_unique<model::VadModel<float>>(mcfg);
  for (const auto& [name, t] : out.model->parameters()) assign(parsed.blobs, name, t);
  for (const auto& [name, t] : out.model->buffers()) assign(parsed.blobs, name, t);
  const auto mean = parsed.blobs.find("frontend.norm_mean");
  const auto stdv = parsed.blobs.find("frontend.norm_std");
  if (mean != parsed.blobs.end() && stdv != parsed.blobs.end()) {
    out.frontend.norm_mean = mean->second.data;
    out.frontend.norm_std = stdv->second.data;
  }
  return out;
}

void copy_state(const model::VadModel<float>& src, model::VadModel<float>& dst) {
  auto copy = [](const model::Named<float>& a, const model::Named<float>& b) {
    if (a.size() != b.size()) fail(ErrorCode::kConfig, "model structures differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].second.shape() != b[i].second.shape())
        fail(ErrorCode::kConfig, "model structures differ at " + a[i].first);
      std::copy(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin());
    }
  };
  copy(src.parameters(), dst.parameters());
  copy(src.buffers(), dst.buffers());
}

}  // namespace vadforge::checkpoint
