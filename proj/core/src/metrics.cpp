#include "vadforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vadforge/error.hpp"

namespace vadforge::metrics {

void ScoredFrames::append(std::span<const float> s, std::span<const std::uint8_t> l) {
  if (s.size() != l.size()) {
    fail(ErrorCode::kMetric, "score/label length mismatch: " + std::to_string(s.size()) + " vs " +
                                 std::to_string(l.size()));
  }
  scores.insert(scores.end(), s.begin(), s.end());
  labels.insert(labels.end(), l.begin(), l.end());
}

std::size_t ScoredFrames::positives() const {
  return std::size_t(std::count_if(labels.begin(), labels.end(), [](std::uint8_t v) { return v != 0; }));
}

std::vector<RocPoint> roc_curve(const ScoredFrames& sf) {
  if (sf.scores.size() != sf.labels.size()) {
    fail(ErrorCode::kMetric, "score/label length mismatch");
  }
  const std::size_t n = sf.scores.size();
  const std::size_t pos = sf.positives();
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) {
    fail(ErrorCode::kMetric, "ROC needs both classes (positives=" + std::to_string(pos) +
                                 ", negatives=" + std::to_string(neg) + ")");
  }
  for (double s : sf.scores)
    if (std::isnan(s)) fail(ErrorCode::kMetric, "scores contain NaN");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sf.scores[a] > sf.scores[b]; });
  std::vector<RocPoint> roc;
  roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    const double threshold = sf.scores[order[i]];
    while (i < n && sf.scores[order[i]] == threshold) {
      if (sf.labels[order[i]]) ++tp;
      else ++fp;
      ++i;
    }
    roc.push_back({double(fp) / double(neg), double(tp) / double(pos), threshold});
  }
  return roc;
}

double auc(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) * 0.5;
  return area;
}

double auc(const ScoredFrames& sf) { return auc(roc_curve(sf)); }

double eer(const std::vector<RocPoint>& roc) {
  // d = FPR - FNR rises from -1 at (0,0) to +1 at (1,1).
  auto diff = [&](std::size_t i) { return roc[i].fpr - (1.0 - roc[i].tpr); };
  for (std::size_t i = 0; i < roc.size(); ++i) {
    const double d = diff(i);
    if (d < 0.0) continue;
    if (d == 0.0 || i == 0) return roc[i].fpr;
    const double d0 = diff(i - 1);
    const double t = -d0 / (d - d0);
    return roc[i - 1].fpr + t * (roc[i].fpr - roc[i - 1].fpr);
  }
  return roc.back().fpr;
}

double eer(const ScoredFrames& sf) { return eer(roc_curve(sf)); }

void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& roc) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(10);
  out << "fpr,tpr,threshold\n";
  for (const auto& p : roc) out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
}

void write_roc_json(const std::filesystem::path& path, const std::vector<RocPoint>& roc) {
  nlohmann::json j{{"schema_version", kSchemaVersion}, {"kind", "roc"}};
  auto& pts = j["points"] = nlohmann::json::array();
  for (const auto& p : roc) {
    // JSON has no infinity; the first point's threshold is written as null.
    pts.push_back({{"fpr", p.fpr},
                   {"tpr", p.tpr},
                   {"threshold", std::isfinite(p.threshold) ? nlohmann::json(p.threshold)
                                                            : nlohmann::json(nullptr)}});
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

AttentionReport attention_report(model::VadModel<float>& model, const dsp::MelFrames& mel,
                                 std::span<const std::uint8_t> labels,
                                 std::span<const std::size_t> frame_indices) {
  if (!labels.empty() && labels.size() != mel.frames) {
    fail(ErrorCode::kInput, "label file has " + std::to_string(labels.size()) +
                                " frames, features have " + std::to_string(mel.frames));
  }
  for (std::size_t f : frame_indices) {
    if (f >= mel.frames) {
      fail(ErrorCode::kInput, "query frame " + std::to_string(f) + " out of range (L=" +
                                  std::to_string(mel.frames) + ")");
    }
  }
  const model::Prediction p = model.predict(mel, model::AttentionCapture::kAverage);
  AttentionReport report;
  report.frames = mel.frames;
  report.labels.assign(labels.begin(), labels.end());
  report.probs = p.probs;
  for (std::size_t f : frame_indices) {
    AttentionRow row;
    row.frame = f;
    row.weights.assign(p.attention.begin() + long(f * mel.frames),
                       p.attention.begin() + long((f + 1) * mel.frames));
    const auto m = mel.row(f);
    row.mel.assign(m.begin(), m.end());
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_attention_csv(const std::filesystem::path& path, const AttentionReport& report) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(8);
  out << "query_frame,key_frame,weight,key_label,key_prob\n";
  for (const auto& row : report.rows)
    for (std::size_t k = 0; k < report.frames; ++k) {
      out << row.frame << ',' << k << ',' << row.weights[k] << ',';
      if (!report.labels.empty()) out << int(report.labels[k]);
      out << ',' << report.probs[k] << '\n';
    }
}

void write_attention_json(const std::filesystem::path& path, const AttentionReport& report) {
  nlohmann::json j{{"schema_version", kSchemaVersion},
                   {"kind", "attention"},
                   {"frames", report.frames},
                   {"labels", report.labels},
                   {"probs", report.probs}};
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"frame", r.frame}, {"weights", r.weights}, {"mel", r.mel}});
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump() << '\n';
}

}  // namespace vadforge::metrics
