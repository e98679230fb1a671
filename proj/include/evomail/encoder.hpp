#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evomail {

using Embedding = std::shared_ptr<const Eigen::VectorXd>;

/// Text embedding provider with a digest-keyed cache. Every returned vector has
/// unit L2 norm; empty text maps to e_1.
class SemanticEncoder {
public:
    explicit SemanticEncoder(int dim) : dim_(dim) {}
    virtual ~SemanticEncoder() = default;
    SemanticEncoder(const SemanticEncoder&) = delete;
    SemanticEncoder& operator=(const SemanticEncoder&) = delete;

    int dim() const { return dim_; }
    Embedding encode(std::string_view text);
    std::vector<Embedding> encode_batch(const std::vector<std::string>& texts);

    void clear_cache();
    std::size_t cache_size() const;
    std::size_t cache_hits() const { return hits_; }

protected:
    /// Raw vectors for texts that are all nonempty and not cached.
    virtual std::vector<Eigen::VectorXd> compute(const std::vector<std::string>& texts) = 0;

private:
    Eigen::VectorXd finish(Eigen::VectorXd v) const;

    int dim_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, Embedding> cache_;
    std::size_t hits_ = 0;
};

/// Signed feature hashing of word 3-grams (the whole token sequence when it is
/// shorter than three tokens).
class HashedEncoder final : public SemanticEncoder {
public:
    explicit HashedEncoder(int dim = 256) : SemanticEncoder(dim) {}

protected:
    std::vector<Eigen::VectorXd> compute(const std::vector<std::string>& texts) override;
};

/// Client for an embedding service: POST <base>/embed {"texts": [...]} →
/// {"vectors": [[...], ...]}. Failures raise RemoteUnavailable.
class RemoteEncoder final : public SemanticEncoder {
public:
    RemoteEncoder(std::string base_url, int dim, std::chrono::milliseconds timeout, int max_in_flight = 4,
                  std::size_t batch_size = 64);

protected:
    std::vector<Eigen::VectorXd> compute(const std::vector<std::string>& texts) override;

private:
    std::vector<Eigen::VectorXd> request(const std::vector<std::string>& texts);

    std::string host_;
    int port_ = 80;
    std::string path_prefix_;
    std::chrono::milliseconds timeout_;
    int max_in_flight_;
    std::size_t batch_size_;
};

/// Cosine similarity; 0 when either vector is zero.
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct NodeDescriptor {
    std::string kind;
    std::string desc;
};

/// TASK / NODE_A / NODE_B / RELATION prompt. NODE_A is the neighbour side.
std::string render_pair_prompt(const NodeDescriptor& a, const NodeDescriptor& b, std::string_view relation,
                               std::string_view task_context);

inline constexpr std::string_view kDefaultTaskContext = "classify whether the email is spam or phishing";

}  // namespace evomail
