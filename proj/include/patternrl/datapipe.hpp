#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "patternrl/text_client.hpp"
#include "patternrl/trace.hpp"

namespace patternrl {

class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProvenanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AbnormalityCategory { kPerceptible, kSubtle, kCognitive };

struct Abnormality {
  std::string name;
  AbnormalityCategory category;
};

// Ordered abnormality list. Order is the vote tie-break.
class Taxonomy {
 public:
  explicit Taxonomy(std::vector<Abnormality> items);

  // Fourteen-item default list.
  static const Taxonomy& standard();

  const std::vector<Abnormality>& items() const { return items_; }
  std::optional<std::size_t> index_of(std::string_view name) const;  // case-insensitive
  // Newline-separated "- name" lines, optionally restricted to a category.
  std::string render(std::optional<AbnormalityCategory> category = std::nullopt) const;

 private:
  std::vector<Abnormality> items_;
};

// One image to annotate.
struct ImageItem {
  std::string image_id;
  std::string image_ref;
  std::string real_ref;             // paired real image for stage 1
  Verdict label = Verdict::kFake;
  std::string forgery_type;         // e.g. "face swapping"
  std::string forgery_explanation;  // free text appended to the type
};

// Taxonomy entries named in one annotator reply (", "-separated). Unknown
// names are ignored, repeats within one ballot count once.
std::vector<std::size_t> parse_ballot(std::string_view reply, const Taxonomy& taxonomy);

struct VoteOptions {
  int samples_per_annotator = 5;
  int threshold = 10;  // admitted only with strictly more votes
  int top_k = 2;
};

struct VoteResult {
  std::vector<std::string> selected;  // by count desc, then taxonomy order
  std::vector<int> tally;             // per taxonomy index
  int ballots = 0;
  int failed_calls = 0;
  bool flagged = false;  // fewer than top_k cleared the threshold
};

VoteResult tally_votes(std::span<const std::string> replies, const Taxonomy& taxonomy,
                       const VoteOptions& options = {});

std::string render_stage1_prompt(const ImageItem& item, const Taxonomy& taxonomy);

// Queries every annotator samples_per_annotator times. A failed call counts
// as an empty ballot.
VoteResult stage1_vote(const ImageItem& item, std::span<TextClient* const> annotators,
                       const Taxonomy& taxonomy, const VoteOptions& options = {});

std::string render_stage2_prompt(const ImageItem& item, std::span<const std::string> abnormalities,
                                 const Taxonomy& taxonomy);

// Throws std::invalid_argument unless exactly two abnormalities are given,
// and AnnotationError when every attempt fails or returns empty text.
std::string stage2_forensics(const ImageItem& item, std::span<const std::string> abnormalities,
                             TextClient& annotator, const Taxonomy& taxonomy,
                             int max_attempts = 3);

struct Stage2Sections {
  std::string initial;
  std::string forensics;
  std::string conclusion;
};

// Splits stage-2 text on its "1." / "2." / "3." line markers. Text without
// the markers lands entirely in `forensics`.
Stage2Sections split_stage2(std::string_view text);

std::string render_stage3_prompt(std::string_view forensic_text);

struct Stage3Result {
  std::optional<ReasoningTrace> trace;
  int attempts = 0;
  std::string drop_reason;  // set when trace is empty
};

// Format failures are retried; a well-formed trace whose verdict disagrees
// with `truth` is dropped at once.
Stage3Result stage3_patternize(std::string_view forensic_text, Verdict truth,
                               TextClient& rewriter, int max_attempts = 3);

// ---------------------------------------------------------------------------
// Record store: one JSON object per line, {image_id, stage, payload, status}.
// The latest line for an (image_id, stage) key wins.

enum class RecordStatus { kOk, kFlagged, kDropped };

std::string_view record_status_name(RecordStatus s);

struct StoreRecord {
  std::string image_id;
  int stage = 0;
  std::map<std::string, std::string> payload;
  RecordStatus status = RecordStatus::kOk;

  bool operator==(const StoreRecord&) const = default;
};

class RecordStore {
 public:
  // Loads any existing records at `path`; new records are appended to it.
  explicit RecordStore(std::filesystem::path path);

  std::optional<StoreRecord> get(const std::string& image_id, int stage) const;
  void put(const StoreRecord& record);
  // Sorted by (image_id, stage).
  std::vector<StoreRecord> records() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, int>, StoreRecord> records_;
};

struct AnnotatorSet {
  std::vector<TextClient*> voters;
  TextClient* analyst = nullptr;
  TextClient* rewriter = nullptr;
};

struct AnnotationOptions {
  VoteOptions vote;
  int max_attempts = 3;
  int workers = 1;
};

struct AnnotationSummary {
  int accepted = 0;
  int flagged = 0;
  int dropped = 0;
  int resumed = 0;  // items whose final record was already in the store
};

// Runs stages 1-3 for every item, skipping stages already recorded.
AnnotationSummary run_annotation(std::span<const ImageItem> items, const AnnotatorSet& annotators,
                                 const Taxonomy& taxonomy, RecordStore& store,
                                 const AnnotationOptions& options = {});

// Deterministic annotator for offline runs. Recognizes the three stage
// prompts and answers each in the expected shape.
std::shared_ptr<TextClient> make_stub_annotator(const Taxonomy& taxonomy, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Preference pairs.

enum class RejectKind { kPhi, kPsi };  // correct-but-imprecise, incorrect answer

std::string_view reject_kind_name(RejectKind k);

struct PreferencePair {
  std::string image_id;
  std::string image_ref;
  Verdict truth = Verdict::kFake;
  std::string chosen;
  std::string rejected;
  RejectKind kind = RejectKind::kPsi;
  int judge_score = 0;  // rubric score of `rejected`; 0 when not judged
};

struct CandidateOutput {
  std::string image_id;
  std::string image_ref;
  Verdict truth = Verdict::kFake;
  std::string text;  // sampled SFT-model output
};

struct PairBuildStats {
  int psi = 0;
  int phi = 0;
  int discarded = 0;
  int missing_expert = 0;
  int unparseable = 0;
};

struct PairBuildResult {
  std::vector<PreferencePair> pairs;
  PairBuildStats stats;
};

// kind PSI: candidate verdict wrong. kind PHI: verdict right and rubric
// score < threshold. Otherwise discarded.
PairBuildResult build_mipo_pairs(std::span<const CandidateOutput> candidates,
                                 const std::map<std::string, std::string>& expert_traces,
                                 TextClient& judge, int threshold = 4, int judge_attempts = 3);

// Re-derives verdicts and checks the kind invariant.
bool verify_pair(const PreferencePair& pair, int threshold = 4);

// Image ids of pairs that are not in `train_ids`.
std::vector<std::string> provenance_violations(std::span<const PreferencePair> pairs,
                                               const std::set<std::string>& train_ids);
void require_provenance(std::span<const PreferencePair> pairs,
                        const std::set<std::string>& train_ids);

}  // namespace patternrl
