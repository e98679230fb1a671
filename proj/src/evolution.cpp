#include "evomail/evolution.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "evomail/error.hpp"

namespace evomail {

namespace {

constexpr std::string_view kMemoryHeader = "EVOMAIL-MEMORY v1\n";
constexpr double kClamp = 1e-7;
constexpr double kExhaustiveBudget = 2e6;

struct Glyph {
    char32_t from;
    char32_t to;
};

constexpr Glyph kLeet[] = {{U'a', U'4'}, {U'e', U'3'}, {U'i', U'1'}, {U'o', U'0'}, {U's', U'5'},
                           {U'A', U'4'}, {U'E', U'3'}, {U'I', U'1'}, {U'O', U'0'}, {U'S', U'5'}};

// Latin letters and their Cyrillic lookalikes.
constexpr Glyph kHomoglyph[] = {{U'a', U'а'}, {U'c', U'с'}, {U'e', U'е'}, {U'o', U'о'},
                                {U'p', U'р'}, {U'x', U'х'}, {U'y', U'у'}, {U'i', U'і'},
                                {U's', U'ѕ'}, {U'j', U'ј'}, {U'A', U'А'}, {U'B', U'В'},
                                {U'C', U'С'}, {U'E', U'Е'}, {U'H', U'Н'}, {U'K', U'К'},
                                {U'M', U'М'}, {U'O', U'О'}, {U'P', U'Р'}, {U'T', U'Т'},
                                {U'X', U'Х'}};

template <std::size_t N>
std::optional<char32_t> lookup(const Glyph (&table)[N], char32_t cp) {
    for (const auto& g : table) {
        if (g.from == cp) return g.to;
    }
    return std::nullopt;
}

std::vector<char32_t> code_points(std::string_view s) {
    std::vector<char32_t> cps;
    std::size_t pos = 0;
    while (pos < s.size()) cps.push_back(utf8::next(s, pos));
    return cps;
}

std::string encode(const std::vector<char32_t>& cps) {
    std::string out;
    for (char32_t c : cps) utf8::append(out, c);
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> url_ranges(std::string_view text) {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (const auto& url : find_urls(text)) {
        for (std::size_t at = text.find(url); at != std::string_view::npos; at = text.find(url, at + 1)) {
            ranges.emplace_back(at, at + url.size());
        }
    }
    return ranges;
}

std::string mutate_text(std::string_view text, const Vocabulary& vocab, double rho, Rng& rng,
                        std::optional<MutationOp> forced) {
    const auto protect = url_ranges(text);
    std::string out;
    std::size_t last = 0;
    for (const auto& [b, e] : token_spans(text)) {
        const bool hit = rng.bernoulli(rho);
        const auto op = static_cast<MutationOp>(rng.index(4));
        if (!hit) continue;
        const bool in_url = std::any_of(protect.begin(), protect.end(),
                                        [b = b, e = e](const auto& r) { return b < r.second && r.first < e; });
        if (in_url) continue;
        out.append(text.substr(last, b - last));
        out += mutate_token(text.substr(b, e - b), forced.value_or(op), vocab, rng);
        last = e;
    }
    out.append(text.substr(last));
    return out;
}

void check_sample(const AdversarialSample& s) {
    if (!s.perturbed_features.allFinite()) throw NonFiniteGradient("perturbed_features");
}

}  // namespace

std::string_view to_string(AdversarialKind kind) {
    switch (kind) {
        case AdversarialKind::Grad: return "grad";
        case AdversarialKind::Semantic: return "semantic";
        case AdversarialKind::Hybrid: return "hybrid";
    }
    return "grad";
}

std::shared_ptr<ForwardTrace> score_sample(CogGnn& gnn, const ModelState& model, AdversarialSample& sample) {
    auto t = gnn.forward_local(model, sample.as_override());
    sample.score = t->score[0];
    sample.trace = t;
    return t;
}

AdversarialSample gradient_perturb(CogGnn& gnn, const ModelState& model, const std::string& seed_id, int seed_node,
                                   const Eigen::VectorXd& x_seed, double epsilon, GradDirection direction) {
    AdversarialSample s;
    s.seed_id = seed_id;
    s.seed_node = seed_node;
    s.kind = AdversarialKind::Grad;
    s.epsilon_used = epsilon;
    const auto t = gnn.forward_local(model, {seed_node, x_seed, std::nullopt});
    const double y = t->score[0];
    BackwardRequest request;
    request.seeds.emplace_back(0, 1.0 / y);
    request.input_columns = {0};
    const Eigen::VectorXd g = gnn.backward(model, *t, request, nullptr).front();
    const double sign = direction == GradDirection::Evade ? -1.0 : 1.0;
    const Eigen::VectorXd step = g.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
    s.perturbed_features = x_seed + sign * epsilon * step;
    check_sample(s);
    return s;
}

std::string mutate_token(std::string_view token, MutationOp op, const Vocabulary& vocab, Rng& rng) {
    auto cps = code_points(token);
    switch (op) {
        case MutationOp::Leet:
            for (auto& c : cps) c = lookup(kLeet, c).value_or(c);
            break;
        case MutationOp::ZeroWidth: {
            const std::size_t at = cps.size() >= 2 ? 1 + rng.index(cps.size() - 1) : cps.size();
            cps.insert(cps.begin() + static_cast<std::ptrdiff_t>(at), U'\u200D');
            break;
        }
        case MutationOp::Homoglyph: {
            std::vector<std::size_t> eligible;
            for (std::size_t i = 0; i < cps.size(); ++i) {
                if (lookup(kHomoglyph, cps[i])) eligible.push_back(i);
            }
            if (!eligible.empty()) {
                const std::size_t i = eligible[rng.index(eligible.size())];
                cps[i] = *lookup(kHomoglyph, cps[i]);
            }
            break;
        }
        case MutationOp::VocabSwap:
            if (vocab.size() == 0) break;
            return vocab.terms[rng.index(vocab.size())];
    }
    return encode(cps);
}

AdversarialSample semantic_mutate(const EmailDocument& seed, int seed_node, const FeatureSpace& space, double rho,
                                  std::uint64_t rng_seed, std::optional<MutationOp> forced) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho_mut must lie in [0,1]");
    Rng rng(mix_seed(rng_seed, 0x6d7574));
    EmailDocument doc = seed;
    doc.subject = mutate_text(seed.subject, space.vocabulary(), rho, rng, forced);
    doc.body = mutate_text(seed.body, space.vocabulary(), rho, rng, forced);
    AdversarialSample s;
    s.seed_id = seed.id;
    s.seed_node = seed_node;
    s.kind = AdversarialKind::Semantic;
    s.rho_used = rho;
    s.mutated_text = semantic_text(doc);
    s.description = email_description(doc);
    s.perturbed_features = space.assemble(doc).full;
    check_sample(s);
    return s;
}

AdversarialSample hybrid_combine(const AdversarialSample& grad, const AdversarialSample& semantic, double lambda) {
    if (grad.seed_id != semantic.seed_id || grad.seed_node != semantic.seed_node) {
        throw SeedMismatch("hybrid of " + grad.seed_id + " and " + semantic.seed_id);
    }
    if (grad.perturbed_features.size() != semantic.perturbed_features.size()) {
        throw DimensionMismatch("hybrid parts differ in dimension");
    }
    AdversarialSample s;
    s.seed_id = grad.seed_id;
    s.seed_node = grad.seed_node;
    s.kind = AdversarialKind::Hybrid;
    s.mutated_text = semantic.mutated_text;
    s.description = semantic.description;
    s.perturbed_features = lambda * grad.perturbed_features + (1.0 - lambda) * semantic.perturbed_features;
    s.epsilon_used = grad.epsilon_used;
    s.rho_used = semantic.rho_used;
    s.lambda_used = lambda;
    check_sample(s);
    return s;
}

RewardParts reward_parts(const Eigen::VectorXd& phi_sample, const Eigen::VectorXd& phi_seed,
                         const ExperienceMemory& memory, double score, double novelty_cap) {
    RewardParts r;
    if (memory.empty()) {
        r.novelty = novelty_cap;
    } else {
        r.novelty = std::numeric_limits<double>::infinity();
        for (const auto& e : memory.entries()) {
            if (e.phi.size() != phi_sample.size()) throw DimensionMismatch("memory entry dimension");
            r.novelty = std::min(r.novelty, (phi_sample - e.phi).norm());
        }
    }
    r.evasion = std::max(0.0, 0.5 - score);
    const double base = phi_seed.norm();
    r.complexity = base == 0.0 ? 0.0 : (phi_sample - phi_seed).norm() / base;
    return r;
}

double red_reward(const RewardParts& p, const RewardWeights& w) {
    return w.novelty * p.novelty + w.evasion * p.evasion - w.complexity * p.complexity;
}

std::vector<std::size_t> detect_failures(const std::vector<AdversarialSample>& samples, double delta) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].score < delta && samples[i].ground_truth == Label::Spam) out.push_back(i);
    }
    return out;
}

FailureTrace extract_failure_trace(const HeteroGraph& graph, const ForwardTrace* trace, int local_v,
                                   const PathOptions& options, const ForwardTrace* fallback) {
    if (trace == nullptr) throw TraceUnavailable("sample has no recorded forward pass");
    if (local_v < 0 || local_v >= trace->size() || !trace->is_active(trace->layers, local_v)) {
        throw TraceUnavailable("sample node was not scored in the pass");
    }
    FailureTrace f;
    for (int k = 0; k <= trace->layers; ++k) f.h.push_back(trace->h[static_cast<std::size_t>(k)].col(local_v));
    for (int k = 1; k <= trace->layers; ++k) {
        std::vector<AttentionEntry> row;
        for (int p = trace->sel_begin[static_cast<std::size_t>(local_v)];
             p < trace->sel_begin[static_cast<std::size_t>(local_v) + 1]; ++p) {
            const int u = trace->pair_nbr[static_cast<std::size_t>(p)];
            row.push_back({trace->global[static_cast<std::size_t>(u)], trace->pair_rel[static_cast<std::size_t>(p)],
                           trace->alpha[static_cast<std::size_t>(k) - 1][p]});
        }
        f.rows.push_back(std::move(row));
    }
    f.path = extract_evidence_path(graph, *trace, local_v, options, fallback);
    return f;
}

TraceSummary FailureTrace::summary(int top_k, int max_depth) const {
    TraceSummary s;
    const auto len = static_cast<std::size_t>(std::max(0, max_depth) + 1);
    s.path_kinds.assign(len, -1);
    s.confidences.assign(len, 0.0);
    for (std::size_t i = 0; i < path.steps.size() && i < len; ++i) {
        s.path_kinds[i] = static_cast<int>(path.steps[i].kind);
        s.confidences[i] = path.steps[i].confidence;
    }
    s.attention.assign(static_cast<std::size_t>(std::max(0, top_k)), 0.0);
    if (!rows.empty()) {
        const auto& last = rows.back();
        for (std::size_t i = 0; i < last.size() && i < s.attention.size(); ++i) s.attention[i] = last[i].alpha;
    }
    return s;
}

double sample_distance(const Eigen::VectorXd& phi1, const TraceSummary* t1, const Eigen::VectorXd& phi2,
                       const TraceSummary* t2, double alpha_trace) {
    double d = (phi1 - phi2).norm();
    if (t1 != nullptr && t2 != nullptr && alpha_trace != 0.0) {
        const std::size_t n = std::max(t1->attention.size(), t2->attention.size());
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = i < t1->attention.size() ? t1->attention[i] : 0.0;
            const double b = i < t2->attention.size() ? t2->attention[i] : 0.0;
            sq += (a - b) * (a - b);
        }
        d += alpha_trace * std::sqrt(sq);
    }
    return d;
}

double kmedoids_objective(int n, const std::vector<int>& medoids, const std::function<double(int, int)>& dist) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int m : medoids) best = std::min(best, dist(i, m));
        if (!medoids.empty()) total += best;
    }
    return total;
}

std::vector<int> kmedoids_compress(int n, int k, const std::function<double(int, int)>& dist, std::uint64_t rng_seed,
                                   int max_swaps) {
    if (k <= 0 || n <= 0) return {};
    if (k >= n) {
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    const auto N = static_cast<std::size_t>(n);
    std::vector<double> D(N * N);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) D[static_cast<std::size_t>(i) * N + static_cast<std::size_t>(j)] = i == j ? 0.0 : dist(i, j);
    }
    const auto d = [&](int i, int j) { return D[static_cast<std::size_t>(i) * N + static_cast<std::size_t>(j)]; };
    const auto cost = [&](const std::vector<int>& med) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int m : med) best = std::min(best, d(i, m));
            total += best;
        }
        return total;
    };

    // small problems: enumerate every medoid set
    double subsets = 1.0;
    for (int i = 0; i < k; ++i) subsets = subsets * (n - i) / (i + 1);
    if (subsets * n * k <= kExhaustiveBudget) {
        std::vector<int> pick(static_cast<std::size_t>(k));
        std::iota(pick.begin(), pick.end(), 0);
        std::vector<int> best = pick;
        double best_cost = cost(pick);
        while (true) {
            int i = k - 1;
            while (i >= 0 && pick[static_cast<std::size_t>(i)] == n - k + i) --i;
            if (i < 0) break;
            ++pick[static_cast<std::size_t>(i)];
            for (int j = i + 1; j < k; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j) - 1] + 1;
            const double c = cost(pick);
            if (c < best_cost - 1e-12) {
                best_cost = c;
                best = pick;
            }
        }
        return best;
    }

    Rng rng(mix_seed(rng_seed, 0x706d));
    std::vector<int> med{static_cast<int>(rng.index(N))};
    std::vector<char> is_med(N, 0);
    is_med[static_cast<std::size_t>(med[0])] = 1;
    std::vector<double> nearest(N);
    for (int i = 0; i < n; ++i) nearest[static_cast<std::size_t>(i)] = d(i, med[0]);
    while (static_cast<int>(med.size()) < k) {
        int pick = -1;
        for (int i = 0; i < n; ++i) {
            if (is_med[static_cast<std::size_t>(i)]) continue;
            if (pick < 0 || nearest[static_cast<std::size_t>(i)] > nearest[static_cast<std::size_t>(pick)]) pick = i;
        }
        med.push_back(pick);
        is_med[static_cast<std::size_t>(pick)] = 1;
        for (int i = 0; i < n; ++i) nearest[static_cast<std::size_t>(i)] = std::min(nearest[static_cast<std::size_t>(i)], d(i, pick));
    }

    double current = cost(med);
    for (int iter = 0; iter < max_swaps; ++iter) {
        double best = current;
        int best_pos = -1;
        int best_in = -1;
        for (std::size_t p = 0; p < med.size(); ++p) {
            for (int o = 0; o < n; ++o) {
                if (is_med[static_cast<std::size_t>(o)]) continue;
                auto trial = med;
                trial[p] = o;
                const double c = cost(trial);
                if (c < best - 1e-12) {
                    best = c;
                    best_pos = static_cast<int>(p);
                    best_in = o;
                }
            }
        }
        if (best_pos < 0) break;
        is_med[static_cast<std::size_t>(med[static_cast<std::size_t>(best_pos)])] = 0;
        is_med[static_cast<std::size_t>(best_in)] = 1;
        med[static_cast<std::size_t>(best_pos)] = best_in;
        current = best;
    }

    // Per cluster, the member with the least summed distance to the others.
    std::vector<std::vector<int>> clusters(med.size());
    for (int i = 0; i < n; ++i) {
        std::size_t owner = 0;
        for (std::size_t p = 1; p < med.size(); ++p) {
            if (d(i, med[p]) < d(i, med[owner])) owner = p;
        }
        clusters[owner].push_back(i);
    }
    std::vector<int> out;
    for (std::size_t p = 0; p < med.size(); ++p) {
        int centre = med[p];
        double centre_sum = std::numeric_limits<double>::infinity();
        for (int c : clusters[p]) {
            double s = 0.0;
            for (int o : clusters[p]) s += d(c, o);
            if (s < centre_sum - 1e-12 || (std::abs(s - centre_sum) <= 1e-12 && c < centre)) {
                centre_sum = s;
                centre = c;
            }
        }
        out.push_back(centre);
    }
    std::sort(out.begin(), out.end());
    return out;
}

bool MemoryEntry::operator==(const MemoryEntry& o) const {
    return id == o.id && phi.size() == o.phi.size() && phi == o.phi && cached_score == o.cached_score &&
           trace == o.trace && inserted_at == o.inserted_at && last_used == o.last_used && anchor_id == o.anchor_id &&
           description == o.description;
}

std::uint64_t ExperienceMemory::insert(MemoryEntry entry, int iteration) {
    entry.id = next_id_++;
    entry.inserted_at = iteration;
    entry.last_used = iteration;
    const auto id = entry.id;
    entries_.push_back(std::move(entry));
    evict();
    return id;
}

bool ExperienceMemory::touch(std::uint64_t id, int iteration) {
    for (auto& e : entries_) {
        if (e.id == id) {
            e.last_used = std::max(e.last_used, iteration);
            return true;
        }
    }
    return false;
}

void ExperienceMemory::touch_all(int iteration) {
    for (auto& e : entries_) e.last_used = std::max(e.last_used, iteration);
}

bool ExperienceMemory::contains(std::uint64_t id) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const MemoryEntry& e) { return e.id == id; });
}

void ExperienceMemory::evict() {
    while (entries_.size() > capacity_) {
        const auto victim = std::min_element(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
            if (a.last_used != b.last_used) return a.last_used < b.last_used;
            if (a.inserted_at != b.inserted_at) return a.inserted_at < b.inserted_at;
            return a.id < b.id;
        });
        entries_.erase(victim);
    }
}

std::string ExperienceMemory::serialize() const {
    BinaryWriter w;
    w.raw(kMemoryHeader);
    w.u64(capacity_);
    w.u64(next_id_);
    w.u64(entries_.size());
    for (const auto& e : entries_) {
        w.u64(e.id);
        w.u64(static_cast<std::uint64_t>(e.phi.size()));
        for (Eigen::Index i = 0; i < e.phi.size(); ++i) w.f64(e.phi[i]);
        w.f64(e.cached_score);
        w.u64(e.trace.path_kinds.size());
        for (int k : e.trace.path_kinds) w.i64(k);
        w.u64(e.trace.confidences.size());
        for (double c : e.trace.confidences) w.f64(c);
        w.u64(e.trace.attention.size());
        for (double a : e.trace.attention) w.f64(a);
        w.i64(e.inserted_at);
        w.i64(e.last_used);
        w.str(e.anchor_id);
        w.u8(e.description ? 1 : 0);
        if (e.description) w.str(*e.description);
    }
    return w.bytes();
}

ExperienceMemory ExperienceMemory::deserialize(std::string_view bytes) {
    if (!bytes.starts_with(kMemoryHeader)) {
        if (bytes.starts_with("EVOMAIL-MEMORY")) {
            throw VersionMismatch("memory file: " + std::string(bytes.substr(0, bytes.find('\n'))));
        }
        throw CorruptFile("missing EVOMAIL-MEMORY header", 0);
    }
    BinaryReader in(bytes, kMemoryHeader.size());
    const auto count_of = [&](std::size_t unit) {
        const std::size_t at = in.offset();
        const std::uint64_t n = in.u64();
        if (n > (bytes.size() - in.offset()) / unit) throw CorruptFile("implausible element count", at);
        return static_cast<std::size_t>(n);
    };
    ExperienceMemory m(static_cast<std::size_t>(in.u64()));
    m.next_id_ = in.u64();
    const std::size_t n = count_of(8);
    for (std::size_t i = 0; i < n; ++i) {
        MemoryEntry e;
        e.id = in.u64();
        e.phi.resize(static_cast<Eigen::Index>(count_of(8)));
        for (Eigen::Index j = 0; j < e.phi.size(); ++j) e.phi[j] = in.f64();
        e.cached_score = in.f64();
        e.trace.path_kinds.resize(count_of(8));
        for (auto& k : e.trace.path_kinds) {
            const std::size_t at = in.offset();
            const std::int64_t v = in.i64();
            if (v < -1 || v >= kNodeKindCount) throw CorruptFile("bad node kind in trace", at);
            k = static_cast<int>(v);
        }
        e.trace.confidences.resize(count_of(8));
        for (auto& c : e.trace.confidences) c = in.f64();
        e.trace.attention.resize(count_of(8));
        for (auto& a : e.trace.attention) a = in.f64();
        e.inserted_at = static_cast<int>(in.i64());
        e.last_used = static_cast<int>(in.i64());
        e.anchor_id = in.str();
        const std::size_t at = in.offset();
        const auto flag = in.u8();
        if (flag > 1) throw CorruptFile("bad description flag", at);
        if (flag == 1) e.description = in.str();
        if (e.last_used < e.inserted_at) throw CorruptFile("entry used before insertion", at);
        if (e.id >= m.next_id_) throw CorruptFile("entry id beyond id counter", at);
        m.entries_.push_back(std::move(e));
    }
    if (m.entries_.size() > m.capacity_) throw CorruptFile("memory exceeds its capacity", in.offset());
    if (!in.done()) throw CorruptFile("trailing bytes after memory", in.offset());
    return m;
}

LossReport compose_losses(double task, double cons, double adv, double reg, const LossWeights& w) {
    LossReport r;
    r.task = task;
    r.cons = cons;
    r.adv = adv;
    r.reg = reg;
    r.weights = w;
    r.total = task + w.lambda * cons + w.mu * adv + w.nu * reg;
    return r;
}

double bce(double y, double p) {
    const double q = std::clamp(p, kClamp, 1.0 - kClamp);
    return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

double bce_grad(double y, double p) {
    if (p < kClamp || p > 1.0 - kClamp) return 0.0;
    return -y / p + (1.0 - y) / (1.0 - p);
}

LossReport compute_losses(CogGnn& gnn, const ModelState& model, const LossInputs& in, const LossWeights& w,
                          ModelState* grads, double scale, bool training, std::uint64_t dropout_seed) {
    const auto full = gnn.forward(model, training, dropout_seed);
    double task = 0.0;
    double adv = 0.0;
    double cons = 0.0;
    BackwardRequest request;
    for (const auto& [v, y] : in.labeled) {
        const double p = full->score[v];
        task += bce(y, p);
        if (grads) request.seeds.emplace_back(v, scale * bce_grad(y, p));
    }
    for (int v : in.benign) {
        const double p = full->score[v];
        adv += bce(0.0, p);
        if (grads) request.seeds.emplace_back(v, scale * w.mu * bce_grad(0.0, p));
    }
    if (grads) gnn.backward(model, *full, request, grads);
    for (const auto& sample : in.adversarial) {
        const auto t = gnn.forward_local(model, sample);
        const double p = t->score[0];
        adv += bce(1.0, p);
        if (grads) {
            BackwardRequest r;
            r.seeds.emplace_back(0, scale * w.mu * bce_grad(1.0, p));
            gnn.backward(model, *t, r, grads);
        }
    }
    for (const auto& [sample, target] : in.memory) {
        const auto t = gnn.forward_local(model, sample);
        const double p = t->score[0];
        cons += bce(target, p);
        if (grads) {
            BackwardRequest r;
            r.seeds.emplace_back(0, scale * w.lambda * bce_grad(target, p));
            gnn.backward(model, *t, r, grads);
        }
    }
    const double reg = model.weight_norm_squared();
    if (grads) {
        std::vector<const Eigen::MatrixXd*> params;
        model.visit([&](const std::string&, const Eigen::MatrixXd& t, bool is_bias) { params.push_back(is_bias ? nullptr : &t); });
        std::size_t i = 0;
        grads->visit([&](const std::string&, Eigen::MatrixXd& g, bool) {
            if (params[i] != nullptr) g += scale * w.nu * 2.0 * *params[i];
            ++i;
        });
    }
    const LossReport report = compose_losses(task, cons, adv, reg, w);
    if (!std::isfinite(report.total)) throw NonFiniteLoss("total loss is not finite");
    return report;
}

void EvolutionConfig::validate() const {
    const auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (!(epsilon >= 0.0)) fail("epsilon must be >= 0");
    if (!(rho_mut >= 0.0 && rho_mut <= 1.0)) fail("rho_mut must lie in [0,1]");
    if (!(lambda_hybrid >= 0.0 && lambda_hybrid <= 1.0)) fail("lambda_hybrid must lie in [0,1]");
    if (reward.novelty < 0.0 || reward.evasion < 0.0 || reward.complexity < 0.0 ||
        std::abs(reward.novelty + reward.evasion + reward.complexity - 1.0) > 1e-9) {
        fail("reward weights must be nonnegative and sum to 1");
    }
    if (!(delta_fail > 0.0 && delta_fail < 1.0)) fail("delta_fail must lie in (0,1)");
    if (!(eta >= 0.0) || !std::isfinite(eta)) fail("eta must be >= 0");
    if (alpha_trace < 0.0) fail("alpha_trace must be >= 0");
    if (adversarial_batch < 0) fail("adversarial batch must be >= 0");
    if (iterations < 0) fail("iterations must be >= 0");
    if (loss.lambda < 0.0 || loss.mu < 0.0 || loss.nu < 0.0) fail("loss weights must be >= 0");
    if (batch_size < 0) fail("batch_size must be >= 0");
    if (path.max_depth < 0) fail("path depth must be >= 0");
    if (!(novelty_cap >= 0.0)) fail("novelty_cap must be >= 0");
}

std::vector<AdversarialSample> generate_adversarial_batch(CogGnn& gnn, const ModelState& model,
                                                          const TrainingProblem& problem, const std::vector<int>& seeds,
                                                          const ExperienceMemory& memory,
                                                          const EvolutionConfig& config, std::uint64_t rng_seed) {
    struct Ranked {
        AdversarialSample sample;
        std::size_t order;
    };
    std::vector<Ranked> pool;
    const auto& graph = gnn.graph();
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const int node = seeds[i];
        const EmailDocument& doc = (*problem.docs)[static_cast<std::size_t>(node)];
        const Eigen::VectorXd x = graph.features.col(node);
        AdversarialSample g = gradient_perturb(gnn, model, doc.id, node, x, config.epsilon, config.direction);
        AdversarialSample s = semantic_mutate(doc, node, *problem.space, config.rho_mut, mix_seed(rng_seed, i));
        if (problem.feature_mask.size() > 0) {
            g.perturbed_features.array() *= problem.feature_mask.array();
            s.perturbed_features.array() *= problem.feature_mask.array();
        }
        AdversarialSample h = hybrid_combine(g, s, config.lambda_hybrid);
        for (AdversarialSample* c : {&g, &s, &h}) {
            score_sample(gnn, model, *c);
            c->reward_parts = reward_parts(c->perturbed_features, x, memory, c->score, config.novelty_cap);
            c->reward = red_reward(c->reward_parts, config.reward);
            pool.push_back({std::move(*c), i});
        }
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Ranked& a, const Ranked& b) {
        if (a.sample.reward != b.sample.reward) return a.sample.reward > b.sample.reward;
        if (a.sample.kind != b.sample.kind) return a.sample.kind < b.sample.kind;
        return a.order < b.order;
    });
    const auto keep = std::min(pool.size(), static_cast<std::size_t>(config.adversarial_batch));
    std::vector<AdversarialSample> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back(std::move(pool[i].sample));
    return out;
}

double f1_on(const Eigen::VectorXd& scores, const HeteroGraph& graph, const std::vector<EmailDocument>& docs,
             const std::vector<int>& nodes) {
    (void)graph;
    double tp = 0.0;
    double fp = 0.0;
    double fn = 0.0;
    for (int v : nodes) {
        const bool spam = docs[static_cast<std::size_t>(v)].label == Label::Spam;
        const bool flagged = scores[v] >= 0.5;
        tp += spam && flagged;
        fp += !spam && flagged;
        fn += spam && !flagged;
    }
    return tp == 0.0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
}

TrainResult train(const TrainingProblem& problem, SemanticEncoder& encoder, ModelState model, ExperienceMemory memory,
                  const EvolutionConfig& config, const IterationHook& hook) {
    config.validate();
    if (problem.graph == nullptr || problem.docs == nullptr || problem.space == nullptr) {
        throw ConfigError("training problem is incomplete");
    }
    const HeteroGraph& graph = *problem.graph;
    const auto& docs = *problem.docs;
    std::vector<int> spam_nodes;
    std::vector<int> ham_nodes;
    for (int v : problem.train_nodes) {
        const auto& label = docs[static_cast<std::size_t>(v)].label;
        if (!label) throw ConfigError("training node without a label: " + docs[static_cast<std::size_t>(v)].id);
        (*label == Label::Spam ? spam_nodes : ham_nodes).push_back(v);
    }
    if (spam_nodes.empty() || ham_nodes.empty()) throw EmptyInput("training set needs both labels");

    TrainResult result{std::move(model), std::move(memory), {}};
    if (config.iterations == 0) return result;
    ModelState& theta = result.model;
    ExperienceMemory& mem = result.memory;
    CogGnn gnn(graph, encoder);
    auto eval = gnn.forward(theta, false);
    gnn.set_base(eval);

    for (int t = 1; t <= config.iterations; ++t) {
        const auto started = std::chrono::steady_clock::now();
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(t)));
        IterationRecord rec;
        rec.iteration = t;

        // red team
        auto seeds = spam_nodes;
        rng.shuffle(seeds);
        seeds.resize(std::min(seeds.size(), static_cast<std::size_t>(config.adversarial_batch)));
        std::sort(seeds.begin(), seeds.end());
        auto batch = generate_adversarial_batch(gnn, theta, problem, seeds, mem, config,
                                                mix_seed(config.seed, 0x100000ULL + static_cast<std::uint64_t>(t)));
        double reward_sum = 0.0;
        for (const auto& s : batch) reward_sum += s.reward;
        rec.mean_reward = batch.empty() ? 0.0 : reward_sum / static_cast<double>(batch.size());

        // blue team
        const auto failures = detect_failures(batch, config.delta_fail);
        rec.failures = failures.size();
        const std::size_t room = mem.capacity() > mem.size() ? mem.capacity() - mem.size() : 0;
        const auto k_t = std::min(failures.size(), room);
        if (k_t > 0) {
            std::vector<TraceSummary> summaries;
            for (std::size_t i : failures) {
                const auto trace = extract_failure_trace(graph, batch[i].trace.get(), 0, config.path, eval.get());
                summaries.push_back(trace.summary(theta.hyper.top_k, config.path.max_depth));
            }
            const auto dist = [&](int a, int b) {
                return sample_distance(batch[failures[static_cast<std::size_t>(a)]].perturbed_features,
                                       &summaries[static_cast<std::size_t>(a)],
                                       batch[failures[static_cast<std::size_t>(b)]].perturbed_features,
                                       &summaries[static_cast<std::size_t>(b)], config.alpha_trace);
            };
            const auto medoids = kmedoids_compress(static_cast<int>(failures.size()), static_cast<int>(k_t), dist,
                                                   mix_seed(config.seed, 0x200000ULL + static_cast<std::uint64_t>(t)));
            for (int m : medoids) {
                const auto& s = batch[failures[static_cast<std::size_t>(m)]];
                MemoryEntry e;
                e.phi = s.perturbed_features;
                e.cached_score = s.score;
                e.trace = summaries[static_cast<std::size_t>(m)];
                e.anchor_id = s.seed_id;
                e.description = s.description;
                mem.insert(std::move(e), t);
            }
        }

        // parameter step
        std::vector<int> order = problem.train_nodes;
        const bool minibatch = config.batch_size > 0 && static_cast<std::size_t>(config.batch_size) < order.size();
        if (minibatch) rng.shuffle(order);
        const std::size_t step = minibatch ? static_cast<std::size_t>(config.batch_size) : order.size();
        LossReport total_report;
        double task_sum = 0.0;
        for (std::size_t begin = 0, b = 0; begin < order.size(); begin += step, ++b) {
            LossInputs inputs;
            const std::size_t end = std::min(order.size(), begin + step);
            for (std::size_t i = begin; i < end; ++i) {
                const int v = order[i];
                inputs.labeled.emplace_back(v, static_cast<int>(*docs[static_cast<std::size_t>(v)].label));
            }
            if (b == 0) {
                for (const auto& s : batch) inputs.adversarial.push_back(s.as_override());
                auto benign = ham_nodes;
                rng.shuffle(benign);
                benign.resize(std::min(benign.size(), batch.size()));
                inputs.benign = benign;
                for (const auto& e : mem.entries()) {
                    const auto node = graph.email_node(e.anchor_id);
                    inputs.memory.push_back({NodeOverride{node.value_or(-1), e.phi, e.description}, e.cached_score});
                }
                mem.touch_all(t);
            }
            ModelState grads = ModelState::zeros_like(theta);
            const LossReport r = compute_losses(gnn, theta, inputs, config.loss, &grads,
                                                1.0 / static_cast<double>(inputs.labeled.size()), true,
                                                mix_seed(config.seed, 0x300000ULL + static_cast<std::uint64_t>(t) * 4096 + b));
            if (!std::isfinite(r.total)) throw DivergenceDetected("non-finite loss at iteration " + std::to_string(t));
            task_sum += r.task;
            if (b == 0) total_report = r;
            theta.add_scaled(grads, -config.eta);
            if (!theta.all_finite()) throw DivergenceDetected("non-finite parameters at iteration " + std::to_string(t));
            if (minibatch) {
                eval = gnn.forward(theta, false);
                gnn.set_base(eval);
            }
        }
        rec.loss = compose_losses(task_sum, total_report.cons, total_report.adv, total_report.reg, config.loss);
        if (!minibatch) {
            eval = gnn.forward(theta, false);
            gnn.set_base(eval);
        }
        rec.holdout_f1 = f1_on(eval->score, graph, docs, problem.holdout_nodes);
        rec.memory_size = mem.size();
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.history.push_back(rec);
        if (hook) hook(t, gnn, theta, *eval);
    }
    return result;
}

std::string format_history(const std::vector<IterationRecord>& history) {
    std::string out = "iteration,task,cons,adv,reg,total,holdout_f1,memory_size,mean_reward,failures\n";
    for (const auto& r : history) {
        out += std::to_string(r.iteration) + "," + format_double(r.loss.task) + "," + format_double(r.loss.cons) + "," +
               format_double(r.loss.adv) + "," + format_double(r.loss.reg) + "," + format_double(r.loss.total) + "," +
               format_double(r.holdout_f1) + "," + std::to_string(r.memory_size) + "," + format_double(r.mean_reward) +
               "," + std::to_string(r.failures) + "\n";
    }
    return out;
}

}  // namespace evomail
