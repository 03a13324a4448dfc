#pragma once

// Video-level scoring and the cross-manipulation report.

#include "dfmtl/data.hpp"
#include "dfmtl/model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dfmtl {

inline constexpr Real kDecisionThreshold = 0.5;

struct VideoScore {
  std::string video_id;
  std::vector<Real> clip_probabilities;  // P(manipulated) per clip
  Real aggregated = 0.0;
  int predicted = 0;
  int truth = 0;
};

/// Mean of the clip probabilities; predicted manipulated when >= 0.5.
VideoScore aggregate_video(std::string video_id, std::vector<Real> clip_probabilities, int truth);

/// Scores `k` uniformly spaced clips through the binary path only.
/// Returns nothing for a video too short to yield a clip.
std::optional<VideoScore> score_video(const Model& model, const Weights& weights, const Video& video,
                                      const ManifestRow& row, int clip_length, int k);

/// Fraction of correct videos. Throws ContractViolation on an empty set.
Real accuracy(const std::vector<VideoScore>& scores);

struct EvalResult {
  std::vector<VideoScore> scores;
  int excluded = 0;  // unscoreable videos
  Real accuracy = 0.0;
};

EvalResult evaluate(const Model& model, const Weights& weights, const std::vector<ManifestRow>& rows,
                    VideoStore& store, int clip_length, int k);

inline constexpr const char* kReportHeader = "train_methods,held_out,regime,accuracy";
inline constexpr const char* kAverageHeader = "regime,avg_accuracy";

struct ReportRow {
  std::string train_methods;  // "F2F, FS, NT"
  std::string held_out;
  std::string regime;
  Real accuracy = 0.0;  // fraction in [0,1]
};

struct CrossManipReport {
  std::vector<ReportRow> rows;
  std::vector<std::pair<std::string, Real>> averages;  // regimes with more than one row
};

std::string join_methods(const std::vector<std::string>& methods);

/// Groups rows by regime (first-appearance order) and averages every regime
/// that has more than one held-out row.
CrossManipReport build_report(std::vector<ReportRow> rows);

/// Appends one row, writing the header first if the file is new.
void append_report_row(const std::filesystem::path& csv_path, const ReportRow& row);
std::vector<ReportRow> read_report_rows(const std::filesystem::path& csv_path);

/// Human-readable table: Train on | Test on | Type of training | Accuracy,
/// then the average section.
std::string format_report(const CrossManipReport& report);

/// Writes cross_manipulation.csv, averages.csv and report.txt into out_dir.
void emit_report(const CrossManipReport& report, const std::filesystem::path& out_dir);

}  // namespace dfmtl
