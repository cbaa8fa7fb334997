#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vadforge/frontend.hpp"
#include "vadforge/model.hpp"

namespace vadforge::metrics {

inline constexpr int kSchemaVersion = 1;

struct ScoredFrames {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;

  void append(std::span<const float> s, std::span<const std::uint8_t> l);
  std::size_t positives() const;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // frames with score >= threshold are called speech
};

/// Threshold sweep over the distinct scores, from (0,0) at +inf down to (1,1).
/// Throws kMetric unless both classes are present.
std::vector<RocPoint> roc_curve(const ScoredFrames& sf);

/// Trapezoidal area under roc_curve; ties contribute one half.
double auc(const ScoredFrames& sf);
double auc(const std::vector<RocPoint>& roc);

/// Rate where FPR == FNR, interpolated linearly between sweep points.
double eer(const ScoredFrames& sf);
double eer(const std::vector<RocPoint>& roc);

void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& roc);
void write_roc_json(const std::filesystem::path& path, const std::vector<RocPoint>& roc);

struct AttentionRow {
  std::size_t frame = 0;
  std::vector<float> weights;  // AverageAttention[frame, :]
  std::vector<float> mel;      // log-mel frame the query came from
};

struct AttentionReport {
  std::size_t frames = 0;
  std::vector<std::uint8_t> labels;  // empty when no reference labels were given
  std::vector<float> probs;
  std::vector<AttentionRow> rows;
};

/// Head-averaged final-layer attention rows for the requested query frames.
/// Throws kInput for an out-of-range frame or a label/frame count mismatch.
AttentionReport attention_report(model::VadModel<float>& model, const dsp::MelFrames& mel,
                                 std::span<const std::uint8_t> labels,
                                 std::span<const std::size_t> frame_indices);

/// Long format: query_frame,key_frame,weight,key_label,key_prob
void write_attention_csv(const std::filesystem::path& path, const AttentionReport& report);
void write_attention_json(const std::filesystem::path& path, const AttentionReport& report);

}  // namespace vadforge::metrics
