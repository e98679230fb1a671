#include "evomail/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numeric>

#include "evomail/coggnn.hpp"
#include "evomail/error.hpp"
#include "evomail/util.hpp"

namespace evomail {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionMismatch("scores and labels differ in length");
    if (scores.empty()) throw EmptyInput("no scores");
}

std::vector<std::size_t> by_score_desc(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_lengths(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    double n_pos = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) {
                pos_rank_sum += midrank;
                n_pos += 1.0;
            }
        }
        i = j;
    }
    const double n_neg = static_cast<double>(scores.size()) - n_pos;
    if (n_pos == 0.0 || n_neg == 0.0) return 0.5;
    return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double precision_at_k(std::span<const double> scores, std::span<const int> labels, int k) {
    check_lengths(scores, labels);
    if (k <= 0) throw ConfigError("K must be positive");
    const auto order = by_score_desc(scores);
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    double hits = 0.0;
    for (std::size_t i = 0; i < take; ++i) hits += labels[order[i]] == 1;
    return hits / static_cast<double>(take);
}

MetricsReport classification_metrics(std::span<const double> scores, std::span<const int> labels, double threshold,
                                     const std::vector<int>& ks) {
    check_lengths(scores, labels);
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ConfigError("labels must be 0 or 1");
        const bool flagged = scores[i] >= threshold;
        if (labels[i] == 1) (flagged ? tp : fn) += 1;
        else (flagged ? fp : tn) += 1;
    }
    MetricsReport m;
    m.accuracy = (tp + tn) / static_cast<double>(scores.size());
    m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.auc = roc_auc(scores, labels);
    for (int k : ks) m.precision_at_k[k] = precision_at_k(scores, labels, k);
    return m;
}

PathSignature path_signature(const HeteroGraph& graph, const EvidencePath& path) {
    PathSignature sig;
    for (const auto& step : path.steps) {
        // emails only by kind, their ids are per corpus
        if (step.kind == NodeKind::Email || step.node < 0) {
            sig.insert(std::string(to_string(step.kind)));
        } else {
            sig.insert(std::string(to_string(step.kind)) + ":" + graph.nodes[static_cast<std::size_t>(step.node)].key);
        }
    }
    return sig;
}

double jaccard(const PathSignature& a, const PathSignature& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t common = 0;
    for (const auto& x : a) common += b.contains(x);
    return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

double stc_metric(const std::vector<std::map<std::string, PathSignature>>& checkpoints) {
    if (checkpoints.size() < 2) throw InsufficientCheckpoints("STC needs at least two checkpoints");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 1; c < checkpoints.size(); ++c) {
        for (const auto& [campaign, sig] : checkpoints[c - 1]) {
            const auto it = checkpoints[c].find(campaign);
            if (it == checkpoints[c].end()) continue;
            sum += jaccard(sig, it->second);
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::string_view to_string(Modality modality) {
    switch (modality) {
        case Modality::TextOnly: return "text_only";
        case Modality::TextMeta: return "text_meta";
        case Modality::FullGraph: return "full_graph";
    }
    return "full_graph";
}

Modality parse_modality(std::string_view text) {
    if (text == "text_only") return Modality::TextOnly;
    if (text == "text_meta") return Modality::TextMeta;
    if (text == "full_graph") return Modality::FullGraph;
    throw ConfigError("unknown modality: " + std::string(text));
}

// ---- config

namespace {

struct Field {
    std::string key;
    std::function<std::string()> get;
    std::function<void(std::string_view)> set;
};

std::string bad_value(std::string_view key, std::string_view value) {
    return "bad value for " + std::string(key) + ": '" + std::string(value) + "'";
}

template <typename T>
T parse_integer(std::string_view key, std::string_view value) {
    T out{};
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) throw ConfigError(bad_value(key, value));
    return out;
}

double parse_real(std::string_view key, std::string_view value) {
    try {
        const double v = parse_double(value);
        if (!std::isfinite(v)) throw ConfigError(bad_value(key, value));
        return v;
    } catch (const std::invalid_argument&) {
        throw ConfigError(bad_value(key, value));
    }
}

template <typename T>
Field integer(std::string key, T& ref) {
    return {key, [&ref] { return std::to_string(ref); },
            [&ref, key](std::string_view v) { ref = parse_integer<T>(key, v); }};
}

Field real(std::string key, double& ref) {
    return {key, [&ref] { return format_double(ref); }, [&ref, key](std::string_view v) { ref = parse_real(key, v); }};
}

Field text(std::string key, std::string& ref) {
    return {key, [&ref] { return ref; }, [&ref](std::string_view v) { ref = std::string(v); }};
}

std::vector<Field> fields(ExperimentConfig& c) {
    auto& e = c.evolution;
    auto& r = c.graph.relation;
    auto& p = c.graph.policy;
    std::vector<Field> f = {
        integer("candidates.all_pairs_cap", p.all_pairs_cap),
        integer("candidates.max_candidates", p.max_candidates),
        {"candidates.policy", [&p] { return std::string(p.kind == CandidatePolicy::Kind::Blocked ? "blocked" : "all_pairs"); },
         [&p](std::string_view v) {
             if (v == "blocked") p.kind = CandidatePolicy::Kind::Blocked;
             else if (v == "all_pairs") p.kind = CandidatePolicy::Kind::AllPairs;
             else throw ConfigError(bad_value("candidates.policy", v));
         }},
        real("candidates.temporal_window", p.temporal_window),
        text("encoder.backend", c.encoder),
        integer("encoder.dim", c.hyper.d_p),
        integer("encoder.timeout_ms", c.encoder_timeout_ms),
        text("encoder.url", c.encoder_url),
        {"eval.ks",
         [&c] {
             std::string s;
             for (std::size_t i = 0; i < c.ks.size(); ++i) s += (i ? "," : "") + std::to_string(c.ks[i]);
             return s;
         },
         [&c](std::string_view v) {
             c.ks.clear();
             if (trim(v).empty()) return;
             for (auto part : split(v, ',')) c.ks.push_back(parse_integer<int>("eval.ks", trim(part)));
         }},
        {"eval.modality", [&c] { return std::string(to_string(c.modality)); },
         [&c](std::string_view v) { c.modality = parse_modality(v); }},
        real("eval.novel_fraction", c.novel_fraction),
        integer("eval.split_seed", c.split_seed),
        real("eval.test_fraction", c.test_fraction),
        integer("evolution.adversarial_batch", e.adversarial_batch),
        real("evolution.alpha_trace", e.alpha_trace),
        integer("evolution.batch_size", e.batch_size),
        real("evolution.delta_fail", e.delta_fail),
        {"evolution.direction", [&e] { return std::string(e.direction == GradDirection::Evade ? "evade" : "boost"); },
         [&e](std::string_view v) {
             if (v == "evade") e.direction = GradDirection::Evade;
             else if (v == "boost") e.direction = GradDirection::Boost;
             else throw ConfigError(bad_value("evolution.direction", v));
         }},
        real("evolution.epsilon", e.epsilon),
        real("evolution.eta", e.eta),
        integer("evolution.iterations", e.iterations),
        real("evolution.lambda_hybrid", e.lambda_hybrid),
        real("evolution.novelty_cap", e.novelty_cap),
        real("evolution.rho_mut", e.rho_mut),
        integer("evolution.seed", e.seed),
        integer("explain.max_depth", e.path.max_depth),
        real("explain.min_confidence", e.path.min_confidence),
        integer("explain.top_features", c.top_features),
        text("features.reputation_file", c.reputation_file),
        {"features.text_norm", [&c] { return std::string(to_string(c.text_norm)); },
         [&c](std::string_view v) { c.text_norm = parse_text_norm(v); }},
        integer("features.vocab_cap", c.vocab_cap),
        integer("graph.max_hops", c.graph.max_hops),
        real("graph.pagerank_damping", c.graph.pagerank_damping),
        real("loss.lambda", e.loss.lambda),
        real("loss.mu", e.loss.mu),
        real("loss.nu", e.loss.nu),
        integer("memory.capacity", e.memory_capacity),
        integer("model.attn_hidden", c.hyper.attn_hidden),
        real("model.beta", c.hyper.beta),
        integer("model.d_h", c.hyper.d_h),
        real("model.dropout", c.hyper.dropout),
        real("model.gamma", c.hyper.gamma),
        integer("model.layers", c.hyper.layers),
        integer("model.seed", c.model_seed),
        real("model.tau", c.hyper.tau),
        integer("model.top_k", c.hyper.top_k),
        real("relation.epsilon_r", r.epsilon_r),
        real("relation.sigma_t", r.sigma_t),
        real("relation.w_domain", r.w_domain),
        real("relation.w_semantic", r.w_semantic),
        real("relation.w_sender", r.w_sender),
        real("relation.w_temporal", r.w_temporal),
        real("reward.complexity", e.reward.complexity),
        real("reward.evasion", e.reward.evasion),
        real("reward.novelty", e.reward.novelty),
        integer("synthetic.n_emails", c.synthetic.n_emails),
        integer("synthetic.seed", c.synthetic.seed),
        real("synthetic.spam_ratio", c.synthetic.spam_ratio),
        integer("synthetic.start_epoch", c.synthetic.start_epoch),
        real("synthetic.window_days", c.synthetic.window_days),
    };
    std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) { return a.key < b.key; });
    return f;
}

}  // namespace

void ExperimentConfig::validate() const {
    evolution.validate();
    if (vocab_cap == 0) throw ConfigError("features.vocab_cap must be positive");
    if (encoder != "hashed" && encoder != "remote") throw ConfigError("encoder.backend must be hashed or remote");
    if (encoder == "remote" && encoder_url.empty()) throw ConfigError("encoder.url is required for the remote backend");
    if (encoder_timeout_ms <= 0) throw ConfigError("encoder.timeout_ms must be positive");
    if (hyper.d_p <= 0) throw ConfigError("encoder.dim must be positive");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("eval.test_fraction must lie in (0,1)");
    if (!(novel_fraction >= 0.0 && novel_fraction <= 1.0)) throw ConfigError("eval.novel_fraction must lie in [0,1]");
    for (int k : ks) {
        if (k <= 0) throw ConfigError("eval.ks entries must be positive");
    }
    if (top_features < 0) throw ConfigError("explain.top_features must be >= 0");
    if (!(graph.relation.sigma_t > 0.0)) throw ConfigError("relation.sigma_t must be positive");
    if (!(graph.relation.epsilon_r >= 0.0)) throw ConfigError("relation.epsilon_r must be >= 0");
    for (double w : {graph.relation.w_domain, graph.relation.w_temporal, graph.relation.w_semantic,
                     graph.relation.w_sender}) {
        if (!(w > 0.0)) throw ConfigError("relation weights must be positive");
    }
    if (!(graph.pagerank_damping >= 0.0 && graph.pagerank_damping < 1.0)) {
        throw ConfigError("graph.pagerank_damping must lie in [0,1)");
    }
    if (graph.max_hops < 1) throw ConfigError("graph.max_hops must be >= 1");
    if (synthetic.n_emails < 0) throw ConfigError("synthetic.n_emails must be >= 0");
    if (!(synthetic.spam_ratio > 0.0 && synthetic.spam_ratio < 1.0)) throw ConfigError("synthetic.spam_ratio must lie in (0,1)");
    if (!(synthetic.window_days > 0.0)) throw ConfigError("synthetic.window_days must be positive");
}

ExperimentConfig parse_config(std::string_view input) {
    ExperimentConfig config;
    auto table = fields(config);
    std::set<std::string> seen;
    int line_no = 0;
    for (auto line : split(input, '\n')) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key(trim(line.substr(0, eq)));
        const auto value = trim(line.substr(eq + 1));
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key " + key);
        if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + key);
        it->set(value);
    }
    config.synthetic.phase = Phase::P1;
    config.validate();
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

std::string serialize_config(const ExperimentConfig& config) {
    ExperimentConfig copy = config;
    std::string out;
    for (const auto& f : fields(copy)) out += f.key + "=" + f.get() + "\n";
    return out;
}

std::unique_ptr<SemanticEncoder> make_encoder(const ExperimentConfig& config) {
    if (config.encoder == "remote") {
        return std::make_unique<RemoteEncoder>(config.encoder_url, config.hyper.d_p,
                                               std::chrono::milliseconds(config.encoder_timeout_ms));
    }
    return std::make_unique<HashedEncoder>(config.hyper.d_p);
}

// ---- modalities and graphs

namespace {

std::string strip_urls(const std::string& text) {
    std::string out = text;
    for (const auto& url : find_urls(text)) {
        for (auto at = out.find(url); at != std::string::npos; at = out.find(url, at)) out.erase(at, url.size());
    }
    return out;
}

}  // namespace

std::vector<EmailDocument> apply_modality(const std::vector<EmailDocument>& docs, Modality modality) {
    if (modality != Modality::TextOnly) return docs;
    std::vector<EmailDocument> out = docs;
    for (auto& d : out) {
        d.subject = strip_urls(d.subject);
        d.body = strip_urls(d.body);
        d.urls.clear();
    }
    return out;
}

GraphOptions modality_graph_options(const GraphOptions& base, Modality modality) {
    GraphOptions g = base;
    switch (modality) {
        case Modality::TextOnly:
            g.mask = {false, false, false, false, false, false};
            g.relation.w_domain = 0.0;
            g.relation.w_temporal = 0.0;
            g.relation.w_sender = 0.0;
            break;
        case Modality::TextMeta:
            g.mask.urls = false;
            g.mask.attachments = false;
            break;
        case Modality::FullGraph:
            break;
    }
    return g;
}

Eigen::VectorXd modality_feature_mask(const FeatureSpace& space, Modality modality) {
    Eigen::VectorXd mask = Eigen::VectorXd::Ones(space.dim());
    if (modality == Modality::TextOnly) mask.tail(kMetaDim + kNetworkDim).setZero();
    return mask;
}

HeteroGraph build_corpus_graph(const std::vector<EmailDocument>& docs, const FeatureSpace& space,
                               const ExperimentConfig& config, SemanticEncoder& encoder, Modality modality) {
    const auto view = apply_modality(docs, modality);
    const Eigen::VectorXd mask = modality_feature_mask(space, modality);
    std::vector<Eigen::VectorXd> features;
    features.reserve(view.size());
    for (const auto& d : view) features.push_back(space.assemble(d).full.cwiseProduct(mask));
    auto graph = build_graph(view, features, space.dim(), encoder, modality_graph_options(config.graph, modality));
    return graph;
}

Split split_indices(int n, double test_fraction, std::uint64_t seed) {
    if (n < 0) throw ConfigError("negative corpus size");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    rng.shuffle(order);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * n));
    Split s;
    s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

// ---- persistence

namespace {

constexpr std::string_view kStateMagic = "EVOMAIL-STATE v1\n";

}  // namespace

std::string serialize_state(const Detector& detector) {
    BinaryWriter w;
    w.raw(kStateMagic);
    w.str(serialize_config(detector.config));
    w.str(detector.space.serialize());
    w.str(detector.model.serialize());
    w.str(detector.memory.serialize());
    return w.bytes();
}

Detector deserialize_state(std::string_view bytes) {
    if (!bytes.starts_with(kStateMagic)) {
        if (bytes.starts_with("EVOMAIL-STATE v")) {
            const auto eol = bytes.find('\n');
            throw VersionMismatch("unsupported state version: " + std::string(bytes.substr(0, eol)));
        }
        throw CorruptFile("not an EVOMAIL-STATE file", 0);
    }
    BinaryReader r(bytes, kStateMagic.size());
    Detector d;
    std::size_t at = r.offset();
    try {
        d.config = parse_config(r.str());
        at = r.offset();
        d.space = FeatureSpace::deserialize(r.str());
        at = r.offset();
        d.model = ModelState::deserialize(r.str());
        at = r.offset();
        d.memory = ExperienceMemory::deserialize(r.str());
    } catch (const CorruptFile&) {
        throw;
    } catch (const VersionMismatch&) {
        throw;
    } catch (const Error& e) {
        throw CorruptFile(std::string("invalid state section: ") + e.what(), at);
    }
    if (!r.done()) throw CorruptFile("trailing bytes after state", r.offset());
    if (d.model.hyper.d_in != d.space.dim()) throw CorruptFile("model and feature space disagree", at);
    return d;
}

void save_state(const Detector& detector, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_state(detector));
}

Detector load_state(const std::filesystem::path& path) { return deserialize_state(read_file(path)); }

std::vector<EmailDocument> load_corpus(const std::vector<std::filesystem::path>& paths) {
    std::vector<EmailDocument> docs;
    std::function<void(const std::filesystem::path&)> load = [&](const std::filesystem::path& p) {
        if (std::filesystem::is_directory(p)) {
            std::vector<std::filesystem::path> entries;
            for (const auto& e : std::filesystem::directory_iterator(p)) entries.push_back(e.path());
            std::sort(entries.begin(), entries.end());
            for (const auto& e : entries) load(e);
            return;
        }
        const std::string bytes = read_file(p);
        if (bytes.starts_with("EVOMAIL-FEATURES v")) {
            for (auto& rec : read_feature_records(bytes).records) docs.push_back(std::move(rec.doc));
        } else if (bytes.starts_with("From ")) {
            for (auto entry : split_mbox(bytes)) docs.push_back(parse_email(entry, MessageFormat::MboxEntry));
        } else {
            docs.push_back(parse_email(bytes));
        }
    };
    for (const auto& p : paths) load(p);
    assign_unique_ids(docs);
    return docs;
}

// ---- training

namespace {

ReputationTable reputation_of(const ExperimentConfig& config) {
    return config.reputation_file.empty() ? ReputationTable{} : ReputationTable::load(config.reputation_file);
}

std::vector<EmailDocument> subset(const std::vector<EmailDocument>& docs, const std::vector<int>& idx) {
    std::vector<EmailDocument> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(docs[static_cast<std::size_t>(i)]);
    return out;
}

// One representative email per campaign: the smallest node id among `nodes`.
std::map<std::string, int> campaign_representatives(const std::vector<EmailDocument>& docs,
                                                    const std::vector<int>& nodes) {
    std::map<std::string, int> reps;
    for (int v : nodes) {
        const auto& c = docs[static_cast<std::size_t>(v)].campaign;
        if (c.empty()) continue;
        const auto it = reps.find(c);
        if (it == reps.end() || v < it->second) reps[c] = v;
    }
    return reps;
}

std::map<std::string, PathSignature> campaign_paths(const HeteroGraph& graph, const ForwardTrace& trace,
                                                    const std::map<std::string, int>& reps,
                                                    const PathOptions& options) {
    std::map<std::string, PathSignature> out;
    for (const auto& [campaign, v] : reps) {
        out[campaign] = path_signature(graph, extract_evidence_path(graph, trace, v, options));
    }
    return out;
}

FitResult run_training(const Detector& start, const std::vector<EmailDocument>& docs, const std::vector<int>& train_nodes,
                       const std::vector<int>& holdout, SemanticEncoder& encoder, const EvolutionConfig& evo,
                       const std::vector<int>& campaign_nodes) {
    const auto& config = start.config;
    const auto graph = build_corpus_graph(docs, start.space, config, encoder, config.modality);
    // mutations read the modality's view, not the raw mail
    const auto view = apply_modality(docs, config.modality);
    TrainingProblem problem;
    problem.graph = &graph;
    problem.docs = &view;
    problem.space = &start.space;
    problem.train_nodes = train_nodes;
    problem.holdout_nodes = holdout;
    if (config.modality == Modality::TextOnly) problem.feature_mask = modality_feature_mask(start.space, config.modality);

    const auto reps = campaign_representatives(docs, campaign_nodes);
    std::vector<std::map<std::string, PathSignature>> checkpoints;
    IterationHook hook;
    if (!reps.empty()) {
        hook = [&](int, const CogGnn&, const ModelState&, const ForwardTrace& eval) {
            checkpoints.push_back(campaign_paths(graph, eval, reps, evo.path));
        };
    }
    auto trained = train(problem, encoder, start.model, start.memory, evo, hook);

    FitResult out;
    out.detector = start;
    out.detector.model = std::move(trained.model);
    out.detector.memory = std::move(trained.memory);
    out.history = std::move(trained.history);
    CogGnn gnn(graph, encoder);
    const auto eval = gnn.forward(out.detector.model, false);
    out.email_scores = email_scores(*eval, graph.n_emails);
    if (checkpoints.size() >= 2) out.stc = stc_metric(checkpoints);
    return out;
}

}  // namespace

FitResult fit_detector(const std::vector<EmailDocument>& docs, const std::vector<int>& train,
                       const std::vector<int>& holdout, const ExperimentConfig& config, SemanticEncoder& encoder,
                       const std::vector<int>& campaign_nodes) {
    config.validate();
    if (encoder.dim() != config.hyper.d_p) throw DimensionMismatch("encoder dimension differs from encoder.dim");
    if (train.empty()) throw EmptyInput("no training documents");
    Detector d;
    d.config = config;
    d.space = FeatureSpace::fit(apply_modality(subset(docs, train), config.modality), config.vocab_cap,
                                reputation_of(config), config.text_norm);
    Hyper hyper = config.hyper;
    hyper.d_in = d.space.dim();
    d.model = ModelState::initialize(hyper, config.model_seed);
    d.memory = ExperienceMemory(config.evolution.memory_capacity);
    return run_training(d, docs, train, holdout, encoder, config.evolution, campaign_nodes);
}

FitResult evolve_detector(const Detector& detector, const std::vector<EmailDocument>& docs,
                          const std::vector<int>& train, const std::vector<int>& holdout, SemanticEncoder& encoder,
                          int iterations) {
    EvolutionConfig evo = detector.config.evolution;
    evo.iterations = iterations;
    return run_training(detector, docs, train, holdout, encoder, evo, {});
}

Eigen::VectorXd score_documents(const Detector& detector, const std::vector<EmailDocument>& docs,
                                SemanticEncoder& encoder) {
    if (docs.empty()) throw EmptyInput("no documents to score");
    const auto graph = build_corpus_graph(docs, detector.space, detector.config, encoder, detector.config.modality);
    CogGnn gnn(graph, encoder);
    const auto eval = gnn.forward(detector.model, false);
    return email_scores(*eval, graph.n_emails);
}

Explanation explain_document(const Detector& detector, const std::vector<EmailDocument>& docs,
                             const std::string& email_id, SemanticEncoder& encoder) {
    const auto graph = build_corpus_graph(docs, detector.space, detector.config, encoder, detector.config.modality);
    const auto node = graph.email_node(email_id);
    if (!node) throw ConfigError("unknown email id: " + email_id);
    CogGnn gnn(graph, encoder);
    const auto trace = gnn.forward(detector.model, false);
    Explanation ex;
    ex.score = trace->score[*node];
    ex.path = extract_evidence_path(graph, *trace, *node, detector.config.evolution.path);
    std::vector<int> nodes;
    for (const auto& s : ex.path.steps) nodes.push_back(s.node);
    const auto namer = [&](int n, int index) {
        return graph.nodes[static_cast<std::size_t>(n)].kind == NodeKind::Email ? detector.space.feature_name(index)
                                                                                : entity_feature_name(index);
    };
    ex.attributions = feature_importance(gnn, detector.model, *trace, *node, nodes, detector.config.top_features, namer);
    ex.text = render_explanation(ex.path, ex.attributions, ex.score);
    return ex;
}

// ---- scenarios

namespace {

MetricsReport metrics_on(const Eigen::VectorXd& scores, const std::vector<EmailDocument>& docs,
                         const std::vector<int>& nodes, const std::vector<int>& ks) {
    std::vector<double> s;
    std::vector<int> y;
    for (int v : nodes) {
        const auto& label = docs[static_cast<std::size_t>(v)].label;
        if (!label) continue;
        s.push_back(scores[v]);
        y.push_back(*label == Label::Spam ? 1 : 0);
    }
    return classification_metrics(s, y, 0.5, ks);
}

std::vector<int> labeled_only(const std::vector<EmailDocument>& docs, const std::vector<int>& nodes) {
    std::vector<int> out;
    for (int v : nodes) {
        if (docs[static_cast<std::size_t>(v)].label) out.push_back(v);
    }
    return out;
}

}  // namespace

StaticResult run_cross_modal(const std::vector<EmailDocument>& corpus, const ExperimentConfig& config,
                             Modality modality) {
    ExperimentConfig cfg = config;
    cfg.modality = modality;
    cfg.validate();
    if (corpus.empty()) throw EmptyInput("empty corpus");
    StaticResult out;
    out.split = split_indices(static_cast<int>(corpus.size()), cfg.test_fraction, cfg.split_seed);
    auto encoder = make_encoder(cfg);
    const auto train_nodes = labeled_only(corpus, out.split.train);
    const auto test_nodes = labeled_only(corpus, out.split.test);
    auto fit = fit_detector(corpus, train_nodes, test_nodes, cfg, *encoder, test_nodes);
    out.metrics = metrics_on(fit.email_scores, corpus, test_nodes, cfg.ks);
    out.metrics.stc = fit.stc;
    out.history = std::move(fit.history);
    out.detector = std::move(fit.detector);
    return out;
}

StaticResult run_static(const std::vector<EmailDocument>& corpus, const ExperimentConfig& config) {
    return run_cross_modal(corpus, config, config.modality);
}

std::vector<std::string> pick_novel_templates(const std::vector<std::string>& templates, double fraction,
                                              std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("novel fraction must lie in [0,1]");
    auto shuffled = templates;
    std::sort(shuffled.begin(), shuffled.end());
    Rng rng(mix_seed(seed, 0x6e6f76656cULL));
    rng.shuffle(shuffled);
    const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(templates.size()) + 1e-9));
    shuffled.resize(count);
    std::sort(shuffled.begin(), shuffled.end());
    return shuffled;
}

std::vector<std::vector<EmailDocument>> shift_corpora(const PhaseSpec& base) {
    std::vector<std::vector<EmailDocument>> out;
    for (int p = 1; p <= 3; ++p) {
        PhaseSpec spec = base;
        spec.phase = static_cast<Phase>(p);
        spec.seed = mix_seed(base.seed, static_cast<std::uint64_t>(p));
        out.push_back(generate_phase_corpus(spec));
    }
    return out;
}

ShiftResult run_shift(const std::vector<EmailDocument>& p1, const std::vector<EmailDocument>& p2,
                      const std::vector<EmailDocument>& p3, const ExperimentConfig& config) {
    config.validate();
    if (p1.empty() || p2.empty() || p3.empty()) throw EmptyInput("every phase needs documents");
    auto encoder = make_encoder(config);
    ShiftResult out;

    std::set<std::string> p3_spam_templates;
    for (const auto& d : p3) {
        if (d.label == Label::Spam && !d.campaign.empty()) p3_spam_templates.insert(d.campaign);
    }
    out.novel_templates = pick_novel_templates({p3_spam_templates.begin(), p3_spam_templates.end()},
                                               config.novel_fraction, config.split_seed);
    const std::set<std::string> novel(out.novel_templates.begin(), out.novel_templates.end());

    const std::vector<const std::vector<EmailDocument>*> corpora = {&p1, &p2, &p3};
    Detector detector;
    std::vector<std::map<std::string, PathSignature>> checkpoints;
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        const auto& docs = *corpora[i];
        const auto split = split_indices(static_cast<int>(docs.size()), config.test_fraction,
                                         mix_seed(config.split_seed, i + 1));
        std::vector<int> train_nodes;
        for (int v : labeled_only(docs, split.train)) {
            if (i == 2 && novel.contains(docs[static_cast<std::size_t>(v)].campaign)) continue;
            train_nodes.push_back(v);
        }
        const auto test_nodes = labeled_only(docs, split.test);
        FitResult fit = i == 0 ? fit_detector(docs, train_nodes, test_nodes, config, *encoder)
                               : evolve_detector(detector, docs, train_nodes, test_nodes, *encoder,
                                                 config.evolution.iterations);
        detector = std::move(fit.detector);

        PhaseResult phase;
        phase.phase = static_cast<Phase>(i + 1);
        const auto m = metrics_on(fit.email_scores, docs, test_nodes, {});
        phase.auc = m.auc;
        phase.f1 = m.f1;
        phase.history = std::move(fit.history);
        out.phases.push_back(std::move(phase));

        const auto graph = build_corpus_graph(docs, detector.space, config, *encoder, config.modality);
        CogGnn gnn(graph, *encoder);
        const auto eval = gnn.forward(detector.model, false);
        checkpoints.push_back(campaign_paths(graph, *eval, campaign_representatives(docs, test_nodes), config.evolution.path));

        if (i == 2) {
            std::vector<int> novel_nodes;
            for (int v = 0; v < static_cast<int>(docs.size()); ++v) {
                const auto& d = docs[static_cast<std::size_t>(v)];
                if (d.label == Label::Spam && novel.contains(d.campaign)) novel_nodes.push_back(v);
            }
            out.novel_emails = novel_nodes.size();
            for (int v : test_nodes) {
                if (docs[static_cast<std::size_t>(v)].label == Label::Ham) novel_nodes.push_back(v);
            }
            if (out.novel_emails > 0) out.novel_f1 = metrics_on(fit.email_scores, docs, novel_nodes, {}).f1;
        }
    }
    out.delta = out.phases.front().auc - out.phases.back().auc;
    out.stc = stc_metric(checkpoints);
    return out;
}

// ---- reports

void Report::add(std::string key, double value) { add(std::move(key), format_double(value)); }

std::optional<std::string> Report::get(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    return std::nullopt;
}

std::string Report::to_text() const {
    std::string out = "EVOMAIL-REPORT v1\n";
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
}

Report Report::parse(std::string_view text) {
    const auto eol = text.find('\n');
    const auto header = text.substr(0, eol);
    if (header != "EVOMAIL-REPORT v1") {
        if (header.starts_with("EVOMAIL-REPORT v")) throw VersionMismatch("unsupported report: " + std::string(header));
        throw CorruptFile("not an EVOMAIL-REPORT file", 0);
    }
    Report r;
    std::size_t pos = eol == std::string_view::npos ? text.size() : eol + 1;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(pos, end - pos);
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw CorruptFile("report line without '='", pos);
        r.add(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
        pos = end + 1;
    }
    return r;
}

void add_metrics(Report& report, const std::string& prefix, const MetricsReport& m) {
    report.add(prefix + "accuracy", m.accuracy);
    report.add(prefix + "precision", m.precision);
    report.add(prefix + "recall", m.recall);
    report.add(prefix + "f1", m.f1);
    report.add(prefix + "auc", m.auc);
    for (const auto& [k, v] : m.precision_at_k) report.add(prefix + "precision_at_" + std::to_string(k), v);
    if (m.stc) report.add(prefix + "stc", *m.stc);
}

void add_history(Report& report, const std::string& prefix, const std::vector<IterationRecord>& history) {
    for (const auto& r : history) {
        const std::string p = prefix + "iteration." + std::to_string(r.iteration) + ".";
        report.add(p + "loss_task", r.loss.task);
        report.add(p + "loss_cons", r.loss.cons);
        report.add(p + "loss_adv", r.loss.adv);
        report.add(p + "loss_reg", r.loss.reg);
        report.add(p + "loss_total", r.loss.total);
        report.add(p + "holdout_f1", r.holdout_f1);
        report.add(p + "memory_size", std::to_string(r.memory_size));
        report.add(p + "mean_reward", r.mean_reward);
        report.add(p + "failures", std::to_string(r.failures));
    }
}

namespace {

void add_config(Report& report, const ExperimentConfig& config) {
    const std::string text = serialize_config(config);
    for (auto line : split(text, '\n')) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        report.add("config." + std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
}

}  // namespace

Report static_report(const ExperimentConfig& config, const StaticResult& result, std::string_view scenario) {
    Report r;
    r.add("scenario", std::string(scenario));
    r.add("modality", std::string(to_string(result.detector.config.modality)));
    add_config(r, config);
    r.add("split.train", std::to_string(result.split.train.size()));
    r.add("split.test", std::to_string(result.split.test.size()));
    add_metrics(r, "metric.", result.metrics);
    r.add("note.stc", "mean Jaccard of per-campaign evidence paths across iterations");
    add_history(r, "history.", result.history);
    return r;
}

Report shift_report(const ExperimentConfig& config, const ShiftResult& result) {
    Report r;
    r.add("scenario", "shift");
    add_config(r, config);
    std::string tags;
    for (const auto& t : result.novel_templates) tags += (tags.empty() ? "" : ",") + t;
    r.add("novel.templates", tags);
    r.add("novel.emails", std::to_string(result.novel_emails));
    for (const auto& p : result.phases) {
        const std::string prefix = "phase." + std::string(to_string(p.phase)) + ".";
        r.add(prefix + "auc", p.auc);
        r.add(prefix + "f1", p.f1);
    }
    r.add("metric.novel_f1", result.novel_f1);
    r.add("metric.delta_auc", result.delta);
    if (result.stc) r.add("metric.stc", *result.stc);
    r.add("note.stc", "mean Jaccard of per-campaign evidence paths across phases");
    for (const auto& p : result.phases) add_history(r, "history." + std::string(to_string(p.phase)) + ".", p.history);
    return r;
}

std::string metrics_table(const MetricsReport& m) {
    std::string out = "metric        value\n";
    const auto row = [&](std::string name, double v) {
        name.resize(std::max<std::size_t>(name.size(), 14), ' ');
        out += name + format_fixed(v, 4) + "\n";
    };
    row("accuracy", m.accuracy);
    row("precision", m.precision);
    row("recall", m.recall);
    row("f1", m.f1);
    row("auc", m.auc);
    for (const auto& [k, v] : m.precision_at_k) row("P@" + std::to_string(k), v);
    if (m.stc) row("stc", *m.stc);
    return out;
}

std::string history_table(const std::vector<IterationRecord>& history, bool with_seconds) {
    std::string out = "iter  loss_total  holdout_f1  memory  failures  reward";
    out += with_seconds ? "  seconds\n" : "\n";
    for (const auto& r : history) {
        std::string line = std::to_string(r.iteration);
        line.resize(6, ' ');
        std::string loss = format_fixed(r.loss.total, 4);
        loss.resize(12, ' ');
        std::string f1 = format_fixed(r.holdout_f1, 4);
        f1.resize(12, ' ');
        std::string mem = std::to_string(r.memory_size);
        mem.resize(8, ' ');
        std::string fails = std::to_string(r.failures);
        fails.resize(10, ' ');
        out += line + loss + f1 + mem + fails + format_fixed(r.mean_reward, 4);
        if (with_seconds) out += "  " + format_fixed(r.seconds, 2);
        out += "\n";
    }
    return out;
}

}  // namespace evomail
