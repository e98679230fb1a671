#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evomail/email.hpp"

namespace evomail {

/// Lowercase Unicode letter/digit runs. Zero-width characters are kept inside
/// tokens so obfuscated words stay distinct from their clean spelling.
std::vector<std::string> tokenize(std::string_view text);

/// Byte spans [begin, end) of the tokens produced by tokenize().
std::vector<std::pair<std::size_t, std::size_t>> token_spans(std::string_view text);

struct Vocabulary {
    std::vector<std::string> terms;
    std::vector<std::uint64_t> document_frequencies;
    std::uint64_t corpus_size = 0;

    /// Index of `term` or -1.
    int index_of(std::string_view term) const;
    std::size_t size() const { return terms.size(); }
    void rebuild_index();

    bool operator==(const Vocabulary& other) const {
        return terms == other.terms && document_frequencies == other.document_frequencies &&
               corpus_size == other.corpus_size;
    }

private:
    std::unordered_map<std::string, int> index_;
};

/// Terms ordered by descending document frequency, ties lexicographic; at most
/// `cap` of them. Throws EmptyCorpus.
Vocabulary build_vocabulary(const std::vector<EmailDocument>& corpus, std::size_t cap);

struct ReputationRecord {
    double reputation = 0.5;
    double age_days = 0.0;
};

/// domain<TAB>reputation<TAB>age_days per line; missing file means defaults.
class ReputationTable {
public:
    static ReputationTable load(const std::filesystem::path& path);
    static ReputationTable parse(std::string_view text);

    void set(const std::string& domain, ReputationRecord record) { records_[domain] = record; }
    double sender_reputation(const EmailDocument& doc) const;
    double domain_age(const EmailDocument& doc) const;
    std::string serialize() const;
    std::size_t size() const { return records_.size(); }

private:
    std::unordered_map<std::string, ReputationRecord> records_;
};

inline constexpr int kMetaDim = 4;
inline constexpr int kNetworkDim = 3;

enum class TextNorm { None, L2 };
std::string_view to_string(TextNorm norm);
/// "none" | "l2". Throws ConfigError.
TextNorm parse_text_norm(std::string_view text);

/// Subject tf-idf ⊕ body tf-idf; with L2 each half is scaled to unit norm.
Eigen::VectorXd extract_text_features(const EmailDocument& doc, const Vocabulary& vocab,
                                      TextNorm norm = TextNorm::None);
/// Unstandardized [hour, weekday, body length, attachment count].
Eigen::VectorXd raw_meta_features(const EmailDocument& doc);
/// Unstandardized [sender reputation, domain age, url count].
Eigen::VectorXd raw_network_features(const EmailDocument& doc, const ReputationTable& reputation);

/// Per-feature z-score frozen at fit time. Zero std maps the feature to 0.
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;

    static Standardizer fit(const std::vector<Eigen::VectorXd>& rows, int dim);
    Eigen::VectorXd apply(const Eigen::VectorXd& raw) const;
    bool operator==(const Standardizer& o) const { return mean == o.mean && stddev == o.stddev; }
};

struct FeatureVector {
    Eigen::VectorXd text;
    Eigen::VectorXd meta;
    Eigen::VectorXd network;
    Eigen::VectorXd full;
};

/// Everything needed to featurize a document: vocabulary, reputation table and
/// the frozen standardizers.
class FeatureSpace {
public:
    FeatureSpace() = default;
    static FeatureSpace fit(const std::vector<EmailDocument>& corpus, std::size_t vocab_cap,
                            ReputationTable reputation = {}, TextNorm text_norm = TextNorm::L2);

    FeatureVector assemble(const EmailDocument& doc) const;
    Eigen::VectorXd extract_text_features(const EmailDocument& doc) const;
    Eigen::VectorXd extract_meta_features(const EmailDocument& doc) const;
    Eigen::VectorXd extract_network_features(const EmailDocument& doc) const;

    int text_dim() const { return static_cast<int>(2 * vocab_.size()); }
    int dim() const { return text_dim() + kMetaDim + kNetworkDim; }
    std::string feature_name(int index) const;

    const Vocabulary& vocabulary() const { return vocab_; }
    const ReputationTable& reputation() const { return reputation_; }
    TextNorm text_norm() const { return text_norm_; }
    const Standardizer& meta_standardizer() const { return meta_; }
    const Standardizer& network_standardizer() const { return network_; }

    /// Text block starting with "EVOMAIL-FEATURESPACE v1".
    std::string serialize() const;
    static FeatureSpace deserialize(std::string_view text);

    bool operator==(const FeatureSpace& o) const {
        return vocab_ == o.vocab_ && text_norm_ == o.text_norm_ && meta_ == o.meta_ && network_ == o.network_;
    }

private:
    Vocabulary vocab_;
    ReputationTable reputation_;
    TextNorm text_norm_ = TextNorm::L2;
    Standardizer meta_;
    Standardizer network_;
};

struct FeatureRecord {
    EmailDocument doc;
    Eigen::VectorXd features;
};

struct FeatureFile {
    FeatureSpace space;
    std::vector<FeatureRecord> records;
};

/// "EVOMAIL-FEATURES v1" header line, a JSON line holding the feature space,
/// then one JSON object per document. Throws VersionMismatch / CorruptFile.
std::string write_feature_records(const FeatureFile& file);
FeatureFile read_feature_records(std::string_view text);

std::string document_to_json(const EmailDocument& doc);
EmailDocument document_from_json(std::string_view json);

}  // namespace evomail
