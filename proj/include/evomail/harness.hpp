#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evomail/encoder.hpp"
#include "evomail/evolution.hpp"
#include "evomail/explain.hpp"
#include "evomail/features.hpp"
#include "evomail/graph.hpp"
#include "evomail/model.hpp"
#include "evomail/synthetic.hpp"

namespace evomail {

struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    std::map<int, double> precision_at_k;
    std::optional<double> stc;
};

/// Threshold metrics, midrank AUC and Precision@K. Throws EmptyInput, and
/// DimensionMismatch on unequal lengths.
MetricsReport classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                     double threshold = 0.5, const std::vector<int>& ks = {10, 50, 100});
/// Rank statistic with midranks; 0.5 when one class is missing.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
/// Fraction of spam among the K highest scores (ties by position).
double precision_at_k(std::span<const double> scores, std::span<const int> labels, int k);

using PathSignature = std::set<std::string>;

/// "kind:key" of every entity on the path, bare "email" for email nodes.
PathSignature path_signature(const HeteroGraph& graph, const EvidencePath& path);
double jaccard(const PathSignature& a, const PathSignature& b);
/// Mean Jaccard of each campaign's path signature between consecutive
/// checkpoints; campaigns seen once are skipped, 0 when nothing overlaps.
/// Throws InsufficientCheckpoints.
double stc_metric(const std::vector<std::map<std::string, PathSignature>>& checkpoints);

enum class Modality { TextOnly, TextMeta, FullGraph };
std::string_view to_string(Modality modality);
/// Throws ConfigError.
Modality parse_modality(std::string_view text);

/// Every tunable of the pipeline as one flat key=value record.
struct ExperimentConfig {
    std::size_t vocab_cap = 2000;
    std::string reputation_file;
    TextNorm text_norm = TextNorm::L2;
    GraphOptions graph;
    std::string encoder = "hashed";  // hashed | remote
    std::string encoder_url;
    int encoder_timeout_ms = 5000;
    Hyper hyper;  // d_in comes from the feature space
    std::uint64_t model_seed = 1;
    EvolutionConfig evolution;
    int top_features = 5;
    double test_fraction = 0.2;
    std::uint64_t split_seed = 11;
    std::vector<int> ks = {10, 50, 100};
    double novel_fraction = 0.1;
    Modality modality = Modality::FullGraph;
    PhaseSpec synthetic;

    /// Throws ConfigError.
    void validate() const;
};

/// Unknown keys, bad values and duplicates throw ConfigError. '#' starts a comment.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every key, sorted; parse_config(serialize_config(c)) == c field by field.
std::string serialize_config(const ExperimentConfig& config);

std::unique_ptr<SemanticEncoder> make_encoder(const ExperimentConfig& config);

/// Documents as seen by a modality: text_only drops URL strings from text.
std::vector<EmailDocument> apply_modality(const std::vector<EmailDocument>& docs, Modality modality);
/// Graph options as seen by a modality.
GraphOptions modality_graph_options(const GraphOptions& base, Modality modality);
/// Feature multiplier of a modality (1 kept, 0 masked).
Eigen::VectorXd modality_feature_mask(const FeatureSpace& space, Modality modality);

/// Featurizes `docs` in `space` and builds their graph.
HeteroGraph build_corpus_graph(const std::vector<EmailDocument>& docs, const FeatureSpace& space,
                               const ExperimentConfig& config, SemanticEncoder& encoder, Modality modality);

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};
/// Seeded shuffle; the test side holds round(fraction·n) items. Both sorted.
Split split_indices(int n, double test_fraction, std::uint64_t seed);

/// Trained detector: everything needed to score new mail.
struct Detector {
    ExperimentConfig config;
    FeatureSpace space;
    ModelState model;
    ExperienceMemory memory;

    bool operator==(const Detector& o) const {
        return space == o.space && model == o.model && memory == o.memory &&
               serialize_config(config) == serialize_config(o.config);
    }
};

/// Binary container "EVOMAIL-STATE v1\n". Throws VersionMismatch / CorruptFile.
std::string serialize_state(const Detector& detector);
Detector deserialize_state(std::string_view bytes);
void save_state(const Detector& detector, const std::filesystem::path& path);
Detector load_state(const std::filesystem::path& path);

/// Email files (.eml), mbox files, directories of either, or an ingest feature
/// file. Ids are made unique.
std::vector<EmailDocument> load_corpus(const std::vector<std::filesystem::path>& paths);

/// Labeled training documents → fresh detector + trained state.
struct FitResult {
    Detector detector;
    std::vector<IterationRecord> history;
    Eigen::VectorXd email_scores;  // per document after the last iteration
    std::optional<double> stc;
};

/// Fits the feature space on `train`, builds the graph over all of `docs` and
/// runs the red–blue loop. `holdout` nodes are only monitored. When
/// `campaign_nodes` is nonempty, STC is tracked over them per iteration.
FitResult fit_detector(const std::vector<EmailDocument>& docs, const std::vector<int>& train,
                       const std::vector<int>& holdout, const ExperimentConfig& config, SemanticEncoder& encoder,
                       const std::vector<int>& campaign_nodes = {});

/// Continues training an existing detector on a new corpus (frozen feature space).
FitResult evolve_detector(const Detector& detector, const std::vector<EmailDocument>& docs,
                          const std::vector<int>& train, const std::vector<int>& holdout, SemanticEncoder& encoder,
                          int iterations);

/// Email scores of `docs` under the detector, on a graph of `docs`.
Eigen::VectorXd score_documents(const Detector& detector, const std::vector<EmailDocument>& docs,
                                SemanticEncoder& encoder);

struct Explanation {
    double score = 0.0;
    EvidencePath path;
    std::vector<std::vector<FeatureImportance>> attributions;
    std::string text;
};

/// Throws ConfigError when the id is unknown.
Explanation explain_document(const Detector& detector, const std::vector<EmailDocument>& docs,
                             const std::string& email_id, SemanticEncoder& encoder);

struct StaticResult {
    MetricsReport metrics;
    Split split;
    std::vector<IterationRecord> history;
    Detector detector;
};

StaticResult run_static(const std::vector<EmailDocument>& corpus, const ExperimentConfig& config);
StaticResult run_cross_modal(const std::vector<EmailDocument>& corpus, const ExperimentConfig& config,
                             Modality modality);

struct PhaseResult {
    Phase phase = Phase::P1;
    double auc = 0.0;
    double f1 = 0.0;
    std::vector<IterationRecord> history;
};

struct ShiftResult {
    std::vector<PhaseResult> phases;
    std::vector<std::string> novel_templates;
    double novel_f1 = 0.0;
    std::size_t novel_emails = 0;
    double delta = 0.0;
    std::optional<double> stc;
};

/// Campaign tags held out of P3 updates: floor(fraction·|templates|), seeded.
std::vector<std::string> pick_novel_templates(const std::vector<std::string>& templates, double fraction,
                                              std::uint64_t seed);

/// P1, P2 and P3 corpora of `base` (its phase ignored), seeds derived per phase.
std::vector<std::vector<EmailDocument>> shift_corpora(const PhaseSpec& base);

/// Train on the first corpus, evolve on the second and third in turn, each on
/// its own graph. Novel P3 templates never enter an update.
ShiftResult run_shift(const std::vector<EmailDocument>& p1, const std::vector<EmailDocument>& p2,
                      const std::vector<EmailDocument>& p3, const ExperimentConfig& config);

/// Ordered key=value record behind "EVOMAIL-REPORT v1".
class Report {
public:
    void add(std::string key, std::string value) { entries_.emplace_back(std::move(key), std::move(value)); }
    void add(std::string key, double value);
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    std::optional<std::string> get(std::string_view key) const;

    std::string to_text() const;
    /// Throws VersionMismatch / CorruptFile.
    static Report parse(std::string_view text);

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

void add_metrics(Report& report, const std::string& prefix, const MetricsReport& metrics);
void add_history(Report& report, const std::string& prefix, const std::vector<IterationRecord>& history);

Report static_report(const ExperimentConfig& config, const StaticResult& result, std::string_view scenario);
Report shift_report(const ExperimentConfig& config, const ShiftResult& result);

/// Human-readable tables for a metrics record.
std::string metrics_table(const MetricsReport& metrics);
std::string history_table(const std::vector<IterationRecord>& history, bool with_seconds);

}  // namespace evomail
