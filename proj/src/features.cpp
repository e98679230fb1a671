#include "evomail/features.hpp"

#include <unicode/uchar.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "evomail/error.hpp"
#include "evomail/util.hpp"

namespace evomail {

namespace {

bool is_zero_width(char32_t cp) {
    return (cp >= 0x200b && cp <= 0x200d) || cp == 0x2060 || cp == 0xfeff;
}

bool is_token_char(char32_t cp) {
    return u_isalnum(static_cast<UChar32>(cp)) || is_zero_width(cp);
}

std::map<std::string, double> counts(std::string_view text) {
    std::map<std::string, double> out;
    for (auto& t : tokenize(text)) out[std::move(t)] += 1.0;
    return out;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> token_spans(std::string_view text) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t pos = 0;
    std::optional<std::size_t> start;
    bool has_visible = false;
    const auto close = [&](std::size_t end) {
        // A run made only of zero-width characters is not a word.
        if (start && has_visible) spans.emplace_back(*start, end);
        start.reset();
        has_visible = false;
    };
    while (pos < text.size()) {
        const std::size_t before = pos;
        const char32_t cp = utf8::next(text, pos);
        if (is_token_char(cp)) {
            if (!start) start = before;
            if (!is_zero_width(cp)) has_visible = true;
        } else {
            close(before);
        }
    }
    close(text.size());
    return spans;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    for (const auto& [begin, end] : token_spans(text)) {
        std::string token;
        std::size_t pos = begin;
        while (pos < end) {
            const char32_t cp = utf8::next(text, pos);
            utf8::append(token, static_cast<char32_t>(u_tolower(static_cast<UChar32>(cp))));
        }
        tokens.push_back(std::move(token));
    }
    return tokens;
}

int Vocabulary::index_of(std::string_view term) const {
    if (index_.size() != terms.size()) const_cast<Vocabulary*>(this)->rebuild_index();
    const auto it = index_.find(std::string(term));
    return it == index_.end() ? -1 : it->second;
}

void Vocabulary::rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < terms.size(); ++i) index_.emplace(terms[i], static_cast<int>(i));
}

Vocabulary build_vocabulary(const std::vector<EmailDocument>& corpus, std::size_t cap) {
    if (corpus.empty()) throw EmptyCorpus("cannot build a vocabulary from an empty corpus");
    std::unordered_map<std::string, std::uint64_t> df;
    for (const auto& doc : corpus) {
        std::set<std::string> seen;
        for (auto& t : tokenize(doc.subject)) seen.insert(std::move(t));
        for (auto& t : tokenize(doc.body)) seen.insert(std::move(t));
        for (const auto& t : seen) ++df[t];
    }
    std::vector<std::pair<std::string, std::uint64_t>> entries(df.begin(), df.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (entries.size() > cap) entries.resize(cap);
    Vocabulary vocab;
    vocab.corpus_size = corpus.size();
    for (auto& [term, count] : entries) {
        vocab.terms.push_back(term);
        vocab.document_frequencies.push_back(count);
    }
    vocab.rebuild_index();
    return vocab;
}

ReputationTable ReputationTable::load(const std::filesystem::path& path) {
    if (path.empty() || !std::filesystem::exists(path)) return {};
    return parse(read_file(path));
}

ReputationTable ReputationTable::parse(std::string_view text) {
    ReputationTable table;
    std::size_t offset = 0;
    for (std::string_view line : split(text, '\n')) {
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty() || line.front() == '#') continue;
        const auto fields = split(line, '\t');
        if (fields.size() != 3) throw CorruptFile("reputation record needs 3 tab-separated fields", line_offset);
        ReputationRecord rec;
        try {
            rec.reputation = parse_double(fields[1]);
            rec.age_days = parse_double(fields[2]);
        } catch (const std::invalid_argument&) {
            throw CorruptFile("bad number in reputation record", line_offset);
        }
        if (!(rec.reputation >= 0.0 && rec.reputation <= 1.0) || !std::isfinite(rec.age_days)) {
            throw CorruptFile("reputation out of range", line_offset);
        }
        table.records_[to_lower_ascii(trim(fields[0]))] = rec;
    }
    return table;
}

double ReputationTable::sender_reputation(const EmailDocument& doc) const {
    const auto it = records_.find(doc.sender_domain);
    return it == records_.end() ? 0.5 : it->second.reputation;
}

double ReputationTable::domain_age(const EmailDocument& doc) const {
    const auto it = records_.find(doc.sender_domain);
    return it == records_.end() ? 0.0 : it->second.age_days;
}

std::string ReputationTable::serialize() const {
    std::vector<std::string> domains;
    for (const auto& [domain, rec] : records_) domains.push_back(domain);
    std::sort(domains.begin(), domains.end());
    std::string out;
    for (const auto& d : domains) {
        const auto& rec = records_.at(d);
        out += d + "\t" + format_double(rec.reputation) + "\t" + format_double(rec.age_days) + "\n";
    }
    return out;
}

std::string_view to_string(TextNorm norm) { return norm == TextNorm::L2 ? "l2" : "none"; }

TextNorm parse_text_norm(std::string_view text) {
    if (text == "l2") return TextNorm::L2;
    if (text == "none") return TextNorm::None;
    throw ConfigError("unknown text norm: " + std::string(text));
}

Eigen::VectorXd extract_text_features(const EmailDocument& doc, const Vocabulary& vocab, TextNorm norm) {
    const auto n = static_cast<Eigen::Index>(vocab.size());
    Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * n);
    const double corpus = static_cast<double>(vocab.corpus_size);
    const auto fill = [&](std::string_view text, Eigen::Index base) {
        for (const auto& [term, tf] : counts(text)) {
            const int i = vocab.index_of(term);
            if (i < 0) continue;
            const double df = static_cast<double>(vocab.document_frequencies[static_cast<std::size_t>(i)]);
            out[base + i] = tf * (std::log((1.0 + corpus) / (1.0 + df)) + 1.0);
        }
    };
    fill(doc.subject, 0);
    fill(doc.body, n);
    if (norm == TextNorm::None) return out;
    for (const Eigen::Index base : {Eigen::Index{0}, n}) {
        const double norm = out.segment(base, n).norm();
        if (norm > 0.0) out.segment(base, n) /= norm;
    }
    return out;
}

Eigen::VectorXd raw_meta_features(const EmailDocument& doc) {
    Eigen::VectorXd v(kMetaDim);
    if (doc.timestamp) {
        const std::int64_t t = *doc.timestamp;
        std::int64_t days = t / 86400;
        std::int64_t rem = t % 86400;
        if (rem < 0) {
            rem += 86400;
            --days;
        }
        v[0] = static_cast<double>(rem / 3600);
        // 1970-01-01 was a Thursday (Monday = 0 → Thursday = 3).
        v[1] = static_cast<double>(((days % 7) + 7 + 3) % 7);
    } else {
        v[0] = -1.0;
        v[1] = -1.0;
    }
    v[2] = static_cast<double>(utf8::length(doc.body));
    v[3] = static_cast<double>(doc.attachments.size());
    return v;
}

Eigen::VectorXd raw_network_features(const EmailDocument& doc, const ReputationTable& reputation) {
    Eigen::VectorXd v(kNetworkDim);
    v[0] = reputation.sender_reputation(doc);
    v[1] = reputation.domain_age(doc);
    v[2] = static_cast<double>(doc.urls.size());
    return v;
}

Standardizer Standardizer::fit(const std::vector<Eigen::VectorXd>& rows, int dim) {
    Standardizer s;
    s.mean = Eigen::VectorXd::Zero(dim);
    s.stddev = Eigen::VectorXd::Zero(dim);
    if (rows.empty()) return s;
    for (const auto& r : rows) s.mean += r;
    s.mean /= static_cast<double>(rows.size());
    for (const auto& r : rows) s.stddev += (r - s.mean).cwiseAbs2();
    s.stddev = (s.stddev / static_cast<double>(rows.size())).cwiseSqrt();
    return s;
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& raw) const {
    Eigen::VectorXd out(raw.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i) {
        const double sd = i < stddev.size() ? stddev[i] : 0.0;
        out[i] = sd > 0.0 ? (raw[i] - mean[i]) / sd : 0.0;
    }
    return out;
}

FeatureSpace FeatureSpace::fit(const std::vector<EmailDocument>& corpus, std::size_t vocab_cap,
                               ReputationTable reputation, TextNorm text_norm) {
    FeatureSpace space;
    space.vocab_ = build_vocabulary(corpus, vocab_cap);
    space.text_norm_ = text_norm;
    space.reputation_ = std::move(reputation);
    std::vector<Eigen::VectorXd> meta_rows, net_rows;
    for (const auto& doc : corpus) {
        meta_rows.push_back(raw_meta_features(doc));
        net_rows.push_back(raw_network_features(doc, space.reputation_));
    }
    space.meta_ = Standardizer::fit(meta_rows, kMetaDim);
    space.network_ = Standardizer::fit(net_rows, kNetworkDim);
    return space;
}

Eigen::VectorXd FeatureSpace::extract_meta_features(const EmailDocument& doc) const {
    return meta_.apply(raw_meta_features(doc));
}

Eigen::VectorXd FeatureSpace::extract_network_features(const EmailDocument& doc) const {
    return network_.apply(raw_network_features(doc, reputation_));
}

Eigen::VectorXd FeatureSpace::extract_text_features(const EmailDocument& doc) const {
    return evomail::extract_text_features(doc, vocab_, text_norm_);
}

FeatureVector FeatureSpace::assemble(const EmailDocument& doc) const {
    FeatureVector fv;
    fv.text = extract_text_features(doc);
    fv.meta = extract_meta_features(doc);
    fv.network = extract_network_features(doc);
    fv.full.resize(fv.text.size() + fv.meta.size() + fv.network.size());
    fv.full << fv.text, fv.meta, fv.network;
    return fv;
}

std::string FeatureSpace::feature_name(int index) const {
    static constexpr const char* kMeta[] = {"meta:hour", "meta:weekday", "meta:length", "meta:attach_count"};
    static constexpr const char* kNet[] = {"network:sender_rep", "network:domain_age", "network:url_count"};
    const int n = static_cast<int>(vocab_.size());
    if (index < 0 || index >= dim()) return "?";
    if (index < n) return "subject:" + vocab_.terms[static_cast<std::size_t>(index)];
    if (index < 2 * n) return "body:" + vocab_.terms[static_cast<std::size_t>(index - n)];
    if (index < 2 * n + kMetaDim) return kMeta[index - 2 * n];
    return kNet[index - 2 * n - kMetaDim];
}

std::string FeatureSpace::serialize() const {
    std::string out = "EVOMAIL-FEATURESPACE v1\n";
    out += "corpus_size " + std::to_string(vocab_.corpus_size) + "\n";
    out += "text_norm " + std::string(to_string(text_norm_)) + "\n";
    out += "terms " + std::to_string(vocab_.size()) + "\n";
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        out += vocab_.terms[i] + "\t" + std::to_string(vocab_.document_frequencies[i]) + "\n";
    }
    const auto vec = [&](const char* name, const Eigen::VectorXd& v) {
        out += name;
        for (Eigen::Index i = 0; i < v.size(); ++i) out += " " + format_double(v[i]);
        out += "\n";
    };
    vec("meta_mean", meta_.mean);
    vec("meta_std", meta_.stddev);
    vec("network_mean", network_.mean);
    vec("network_std", network_.stddev);
    const std::string rep = reputation_.serialize();
    out += "reputation " + std::to_string(std::count(rep.begin(), rep.end(), '\n')) + "\n";
    out += rep;
    return out;
}

FeatureSpace FeatureSpace::deserialize(std::string_view text) {
    BinaryReader in(text);
    const auto expect_prefix = [&](const std::string& line, std::string_view key) {
        if (!line.starts_with(std::string(key) + " ")) {
            throw CorruptFile("expected '" + std::string(key) + "'", in.offset());
        }
        return std::string_view(line).substr(key.size() + 1);
    };
    const auto parse_count = [&](std::string_view s) {
        try {
            const double v = parse_double(s);
            if (v < 0 || v != std::floor(v)) throw std::invalid_argument("count");
            return static_cast<std::uint64_t>(v);
        } catch (const std::invalid_argument&) {
            throw CorruptFile("bad count", in.offset());
        }
    };
    const std::string header = in.line();
    if (header != "EVOMAIL-FEATURESPACE v1") {
        if (header.starts_with("EVOMAIL-FEATURESPACE")) throw VersionMismatch("feature space: " + header);
        throw CorruptFile("not a feature space block", 0);
    }
    FeatureSpace space;
    space.vocab_.corpus_size = parse_count(expect_prefix(in.line(), "corpus_size"));
    {
        const std::size_t at = in.offset();
        try {
            space.text_norm_ = parse_text_norm(expect_prefix(in.line(), "text_norm"));
        } catch (const ConfigError&) {
            throw CorruptFile("bad text_norm", at);
        }
    }
    const std::uint64_t n_terms = parse_count(expect_prefix(in.line(), "terms"));
    for (std::uint64_t i = 0; i < n_terms; ++i) {
        const std::size_t at = in.offset();
        const std::string line = in.line();
        const std::size_t tab = line.rfind('\t');
        if (tab == std::string::npos) throw CorruptFile("bad term line", at);
        space.vocab_.terms.push_back(line.substr(0, tab));
        space.vocab_.document_frequencies.push_back(parse_count(std::string_view(line).substr(tab + 1)));
    }
    space.vocab_.rebuild_index();
    const auto vec = [&](std::string_view key, int dim) {
        const std::size_t at = in.offset();
        const std::string line = in.line();
        const auto parts = split(expect_prefix(line, key), ' ');
        if (static_cast<int>(parts.size()) != dim) throw CorruptFile("bad vector length", at);
        Eigen::VectorXd v(dim);
        try {
            for (int i = 0; i < dim; ++i) v[i] = parse_double(parts[static_cast<std::size_t>(i)]);
        } catch (const std::invalid_argument&) {
            throw CorruptFile("bad number", at);
        }
        return v;
    };
    space.meta_.mean = vec("meta_mean", kMetaDim);
    space.meta_.stddev = vec("meta_std", kMetaDim);
    space.network_.mean = vec("network_mean", kNetworkDim);
    space.network_.stddev = vec("network_std", kNetworkDim);
    const std::uint64_t n_rep = parse_count(expect_prefix(in.line(), "reputation"));
    std::string rep;
    for (std::uint64_t i = 0; i < n_rep; ++i) rep += in.line() + "\n";
    space.reputation_ = ReputationTable::parse(rep);
    return space;
}

namespace {

using nlohmann::json;

const char* auth_name(AuthResult r) {
    switch (r) {
        case AuthResult::Pass: return "pass";
        case AuthResult::Fail: return "fail";
        default: return "absent";
    }
}

AuthResult auth_from(const std::string& s) {
    if (s == "pass") return AuthResult::Pass;
    if (s == "fail") return AuthResult::Fail;
    return AuthResult::Absent;
}

json doc_json(const EmailDocument& doc) {
    json j;
    j["id"] = doc.id;
    j["raw_hash"] = doc.raw_hash;
    j["message_id"] = doc.message_id;
    j["in_reply_to"] = doc.in_reply_to;
    j["subject"] = doc.subject;
    j["body"] = doc.body;
    j["sender_address"] = doc.sender_address;
    j["sender_domain"] = doc.sender_domain;
    j["recipients"] = doc.recipient_addresses;
    j["reply_to"] = doc.reply_to ? json(*doc.reply_to) : json(nullptr);
    j["timestamp"] = doc.timestamp ? json(*doc.timestamp) : json(nullptr);
    json urls = json::array();
    for (const auto& u : doc.urls) {
        urls.push_back({{"raw", u.raw}, {"host", u.host}, {"shortened", u.is_shortened},
                        {"homograph", u.is_homograph_suspect}});
    }
    j["urls"] = urls;
    json atts = json::array();
    for (const auto& a : doc.attachments) {
        atts.push_back({{"filename", a.filename}, {"mime_type", a.mime_type}, {"digest", a.digest},
                        {"size", a.size_bytes}});
    }
    j["attachments"] = atts;
    j["auth"] = {{"spf", auth_name(doc.auth.spf)}, {"dkim", auth_name(doc.auth.dkim)},
                 {"dmarc", auth_name(doc.auth.dmarc)}};
    j["label"] = doc.label ? json(static_cast<int>(*doc.label)) : json(nullptr);
    j["campaign"] = doc.campaign;
    return j;
}

EmailDocument doc_from(const json& j) {
    EmailDocument doc;
    doc.id = j.at("id").get<std::string>();
    doc.raw_hash = j.at("raw_hash").get<std::string>();
    doc.message_id = j.at("message_id").get<std::string>();
    doc.in_reply_to = j.at("in_reply_to").get<std::string>();
    doc.subject = j.at("subject").get<std::string>();
    doc.body = j.at("body").get<std::string>();
    doc.sender_address = j.at("sender_address").get<std::string>();
    doc.sender_domain = j.at("sender_domain").get<std::string>();
    doc.recipient_addresses = j.at("recipients").get<std::vector<std::string>>();
    if (!j.at("reply_to").is_null()) doc.reply_to = j.at("reply_to").get<std::string>();
    if (!j.at("timestamp").is_null()) doc.timestamp = j.at("timestamp").get<std::int64_t>();
    for (const auto& u : j.at("urls")) {
        doc.urls.push_back({u.at("raw").get<std::string>(), u.at("host").get<std::string>(),
                            u.at("shortened").get<bool>(), u.at("homograph").get<bool>()});
    }
    for (const auto& a : j.at("attachments")) {
        doc.attachments.push_back({a.at("filename").get<std::string>(), a.at("mime_type").get<std::string>(),
                                   a.at("digest").get<std::string>(), a.at("size").get<std::uint64_t>()});
    }
    doc.auth.spf = auth_from(j.at("auth").at("spf").get<std::string>());
    doc.auth.dkim = auth_from(j.at("auth").at("dkim").get<std::string>());
    doc.auth.dmarc = auth_from(j.at("auth").at("dmarc").get<std::string>());
    if (!j.at("label").is_null()) doc.label = j.at("label").get<int>() == 1 ? Label::Spam : Label::Ham;
    doc.campaign = j.at("campaign").get<std::string>();
    return doc;
}

}  // namespace

std::string document_to_json(const EmailDocument& doc) {
    return doc_json(doc).dump(-1, ' ', false, json::error_handler_t::replace);
}

EmailDocument document_from_json(std::string_view text) {
    try {
        return doc_from(json::parse(text));
    } catch (const json::exception& e) {
        throw CorruptFile(std::string("bad document record: ") + e.what(), 0);
    }
}

std::string write_feature_records(const FeatureFile& file) {
    std::string out = "EVOMAIL-FEATURES v1\n";
    out += json{{"feature_space", file.space.serialize()}}.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    for (const auto& rec : file.records) {
        json j = doc_json(rec.doc);
        // Doubles are written as shortest round-trip strings to keep the file loss-free.
        std::vector<std::string> feats;
        feats.reserve(static_cast<std::size_t>(rec.features.size()));
        for (Eigen::Index i = 0; i < rec.features.size(); ++i) feats.push_back(format_double(rec.features[i]));
        j["features"] = feats;
        out += j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    }
    return out;
}

FeatureFile read_feature_records(std::string_view text) {
    BinaryReader in(text);
    const std::string header = text.empty() ? std::string() : in.line();
    if (header != "EVOMAIL-FEATURES v1") {
        if (header.starts_with("EVOMAIL-FEATURES")) throw VersionMismatch("features file: " + header);
        throw CorruptFile("missing EVOMAIL-FEATURES header", 0);
    }
    FeatureFile file;
    std::size_t at = in.offset();
    try {
        file.space = FeatureSpace::deserialize(json::parse(in.line()).at("feature_space").get<std::string>());
        while (!in.done()) {
            at = in.offset();
            const std::string line = in.line();
            if (line.empty()) continue;
            const json j = json::parse(line);
            FeatureRecord rec;
            rec.doc = doc_from(j);
            const auto& feats = j.at("features");
            rec.features.resize(static_cast<Eigen::Index>(feats.size()));
            for (std::size_t i = 0; i < feats.size(); ++i) {
                rec.features[static_cast<Eigen::Index>(i)] = parse_double(feats[i].get<std::string>());
            }
            file.records.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw CorruptFile(std::string("bad feature record: ") + e.what(), at);
    } catch (const std::invalid_argument& e) {
        throw CorruptFile(std::string("bad feature value: ") + e.what(), at);
    }
    return file;
}

}  // namespace evomail
