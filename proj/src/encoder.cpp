#include "evomail/encoder.hpp"

#include <httplib.h>

#include <cmath>
#include <future>
#include <nlohmann/json.hpp>

#include "evomail/error.hpp"
#include "evomail/features.hpp"
#include "evomail/util.hpp"

namespace evomail {

Eigen::VectorXd SemanticEncoder::finish(Eigen::VectorXd v) const {
    const double norm = v.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(dim_);
        e[0] = 1.0;
        return e;
    }
    return v / norm;
}

Embedding SemanticEncoder::encode(std::string_view text) {
    return encode_batch({std::string(text)}).front();
}

std::vector<Embedding> SemanticEncoder::encode_batch(const std::vector<std::string>& texts) {
    std::vector<Embedding> out(texts.size());
    std::vector<std::string> keys(texts.size());
    std::vector<std::string> missing;
    std::vector<std::size_t> missing_at;
    {
        std::lock_guard lock(mutex_);
        std::unordered_map<std::string, std::size_t> pending;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            keys[i] = sha256_raw(texts[i]);
            if (auto it = cache_.find(keys[i]); it != cache_.end()) {
                out[i] = it->second;
                ++hits_;
            } else if (texts[i].empty()) {
                auto e = std::make_shared<Eigen::VectorXd>(Eigen::VectorXd::Zero(dim_));
                (*e)[0] = 1.0;
                out[i] = e;
                cache_[keys[i]] = out[i];
            } else if (!pending.contains(keys[i])) {
                pending[keys[i]] = missing.size();
                missing.push_back(texts[i]);
                missing_at.push_back(i);
            }
        }
    }
    if (!missing.empty()) {
        std::vector<Eigen::VectorXd> raw = compute(missing);
        if (raw.size() != missing.size()) throw DimensionMismatch("encoder returned wrong number of vectors");
        std::lock_guard lock(mutex_);
        for (std::size_t j = 0; j < missing.size(); ++j) {
            if (raw[j].size() != dim_) throw DimensionMismatch("encoder returned wrong dimension");
            cache_[keys[missing_at[j]]] = std::make_shared<const Eigen::VectorXd>(finish(std::move(raw[j])));
        }
        for (std::size_t i = 0; i < texts.size(); ++i) {
            if (!out[i]) out[i] = cache_.at(keys[i]);
        }
    }
    return out;
}

void SemanticEncoder::clear_cache() {
    std::lock_guard lock(mutex_);
    cache_.clear();
}

std::size_t SemanticEncoder::cache_size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
}

std::vector<Eigen::VectorXd> HashedEncoder::compute(const std::vector<std::string>& texts) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim());
        const auto tokens = tokenize(text);
        const auto add = [&](std::size_t begin, std::size_t end) {
            std::string gram;
            for (std::size_t i = begin; i < end; ++i) {
                if (i > begin) gram.push_back(' ');
                gram += tokens[i];
            }
            const std::uint64_t h = fnv1a64(gram);
            const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim()));
            const double sign = (mix_seed(h, 0) >> 63) != 0 ? -1.0 : 1.0;
            v[bucket] += sign;
        };
        if (tokens.size() < 3) {
            if (!tokens.empty()) add(0, tokens.size());
        } else {
            for (std::size_t i = 0; i + 3 <= tokens.size(); ++i) add(i, i + 3);
        }
        out.push_back(std::move(v));
    }
    return out;
}

RemoteEncoder::RemoteEncoder(std::string base_url, int dim, std::chrono::milliseconds timeout, int max_in_flight,
                             std::size_t batch_size)
    : SemanticEncoder(dim), timeout_(timeout), max_in_flight_(std::max(1, max_in_flight)),
      batch_size_(std::max<std::size_t>(1, batch_size)) {
    std::string_view url = base_url;
    if (url.starts_with("http://")) url.remove_prefix(7);
    else if (url.find("://") != std::string_view::npos) throw ConfigError("remote encoder supports http:// only");
    const std::size_t slash = url.find('/');
    std::string_view authority = url.substr(0, slash);
    if (slash != std::string_view::npos) path_prefix_ = std::string(url.substr(slash));
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    const std::size_t colon = authority.rfind(':');
    if (colon != std::string_view::npos) {
        try {
            port_ = static_cast<int>(parse_double(authority.substr(colon + 1)));
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad port in encoder url");
        }
        authority = authority.substr(0, colon);
    }
    host_ = std::string(authority);
    if (host_.empty()) throw ConfigError("encoder url has no host");
}

std::vector<Eigen::VectorXd> RemoteEncoder::request(const std::vector<std::string>& texts) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    const std::string body = nlohmann::json{{"texts", texts}}.dump(-1, ' ', false,
                                                                     nlohmann::json::error_handler_t::replace);
    auto res = client.Post(path_prefix_ + "/embed", body, "application/json");
    if (!res) throw RemoteUnavailable("embedding service unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw RemoteUnavailable("embedding service status " + std::to_string(res->status));
    std::vector<Eigen::VectorXd> out;
    try {
        const auto j = nlohmann::json::parse(res->body);
        const auto& vectors = j.at("vectors");
        if (vectors.size() != texts.size()) throw RemoteUnavailable("embedding service returned wrong count");
        for (const auto& row : vectors) {
            Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()));
            for (std::size_t i = 0; i < row.size(); ++i) v[static_cast<Eigen::Index>(i)] = row[i].get<double>();
            if (v.size() != dim()) throw RemoteUnavailable("embedding service returned wrong dimension");
            if (!v.allFinite()) throw RemoteUnavailable("embedding service returned non-finite values");
            out.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        throw RemoteUnavailable(std::string("malformed embedding response: ") + e.what());
    }
    return out;
}

std::vector<Eigen::VectorXd> RemoteEncoder::compute(const std::vector<std::string>& texts) {
    std::vector<std::vector<std::string>> batches;
    for (std::size_t i = 0; i < texts.size(); i += batch_size_) {
        batches.emplace_back(texts.begin() + static_cast<std::ptrdiff_t>(i),
                             texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), i + batch_size_)));
    }
    std::vector<Eigen::VectorXd> out;
    out.reserve(texts.size());
    for (std::size_t b = 0; b < batches.size(); b += static_cast<std::size_t>(max_in_flight_)) {
        std::vector<std::future<std::vector<Eigen::VectorXd>>> inflight;
        const std::size_t end = std::min(batches.size(), b + static_cast<std::size_t>(max_in_flight_));
        for (std::size_t i = b; i < end; ++i) {
            inflight.push_back(std::async(std::launch::async, [this, &batches, i] { return request(batches[i]); }));
        }
        for (auto& f : inflight) {
            for (auto& v : f.get()) out.push_back(std::move(v));
        }
    }
    return out;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

std::string render_pair_prompt(const NodeDescriptor& a, const NodeDescriptor& b, std::string_view relation,
                               std::string_view task_context) {
    std::string out;
    out.reserve(64 + a.desc.size() + b.desc.size());
    out += "TASK: ";
    out += task_context;
    out += "\nNODE_A(" + a.kind + "): " + a.desc;
    out += "\nNODE_B(" + b.kind + "): " + b.desc;
    out += "\nRELATION: ";
    out += relation;
    return out;
}

}  // namespace evomail
