#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "patternrl/image.hpp"
#include "patternrl/trace.hpp"

namespace patternrl {

enum class Split { kTrain, kId, kCrossModel, kCrossForgery, kCrossDomain };

std::string_view split_name(Split s);  // "train", "id", "cross_model", ...
std::optional<Split> split_from_name(std::string_view name);  // case-insensitive

struct ManifestRecord {
  std::string id;
  std::string path;
  Verdict label = Verdict::kReal;
  Split split = Split::kTrain;
  std::string subset;
  std::string source;
  std::string forgery_type;

  bool operator==(const ManifestRecord&) const = default;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LeakageError : public ManifestError {
 public:
  using ManifestError::ManifestError;
};

// Forgery types admitted for training fakes.
bool is_training_forgery_type(std::string_view type);

// One JSON object per line. Throws ManifestError naming the line for schema
// problems, and runs check_manifest on the result.
std::vector<ManifestRecord> parse_manifest(std::string_view text);
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);

// Leakage (an id or path shared by TRAIN and an evaluation split) raises
// LeakageError; duplicate ids and non-basic training forgery types raise
// ManifestError.
void check_manifest(std::span<const ManifestRecord> records);
void check_leakage(std::span<const ManifestRecord> train, std::span<const ManifestRecord> eval);

std::string manifest_to_jsonl(std::span<const ManifestRecord> records);

// ---------------------------------------------------------------------------

struct Confusion {
  long tp = 0;  // FAKE is the positive class
  long fp = 0;
  long fn = 0;
  long tn = 0;
  long abstained = 0;

  long total() const { return tp + fp + fn + tn; }
  double accuracy() const;
  double precision() const;  // 0 when nothing was predicted fake
  double recall() const;     // 0 when the subset has no fakes

  bool operator==(const Confusion&) const = default;
};

struct SubsetMetrics {
  Split split = Split::kId;
  std::string subset;
  Confusion counts;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;

  bool operator==(const SubsetMetrics&) const = default;
};

struct SplitReport {
  std::vector<SubsetMetrics> subsets;      // sorted by (split, subset)
  std::map<Split, double> split_average;   // unweighted mean of subset accuracies
  // Mean over the ID split average and every non-ID subset accuracy.
  double overall_average = 0.0;

  bool operator==(const SplitReport&) const = default;
};

// Throwing from the detector marks the record as an abstention.
using Detector = std::function<Verdict(const ManifestRecord&)>;

enum class AbstentionPolicy { kWrong, kExclude };

struct EvalOptions {
  AbstentionPolicy abstention = AbstentionPolicy::kWrong;
  int workers = 1;
};

// TRAIN records are ignored.
SplitReport evaluate(std::span<const ManifestRecord> records, const Detector& detector,
                     const EvalOptions& options = {});

// Recomputes averages from subset accuracies.
SplitReport summarize(std::vector<SubsetMetrics> subsets);

std::string report_to_jsonl(const SplitReport& report, std::string_view label = {});
std::string report_to_table(const SplitReport& report);

// ---------------------------------------------------------------------------

enum class PerturbKind { kIdentity, kJpeg, kBlur, kResize };

struct Perturbation {
  PerturbKind kind = PerturbKind::kIdentity;
  double value = 0.0;  // QF, sigma or scale

  std::string label() const;  // "original", "jpeg:90", "blur:1", "resize:0.5"
  static Perturbation parse(std::string_view text);
  bool operator==(const Perturbation&) const = default;
};

Image perturb(const Image& img, const Perturbation& p);

// original, JPEG QF 90/70/50, blur sigma 1.0/2.0
std::vector<Perturbation> default_grid();

using ImageLoader = std::function<Image(const ManifestRecord&)>;
using ImageDetector = std::function<Verdict(const ManifestRecord&, const Image&)>;

struct RobustnessRow {
  Perturbation perturbation;
  SplitReport report;
  long errors = 0;  // records whose load or perturbation failed
};

struct RobustnessTable {
  std::vector<RobustnessRow> rows;

  std::string to_jsonl() const;
  std::string to_table() const;
};

RobustnessTable run_robustness(std::span<const ManifestRecord> records, const ImageLoader& load,
                               const ImageDetector& detector,
                               std::span<const Perturbation> grid,
                               const EvalOptions& options = {});

}  // namespace patternrl
