#include "evomail/coggnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "evomail/error.hpp"
#include "evomail/util.hpp"

namespace evomail {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr Eigen::Index kMlpChunk = 4096;

// dLoss/dx for y = LN(x) given dLoss/dy.
Eigen::VectorXd layer_norm_backward(const Eigen::Ref<const Eigen::VectorXd>& g,
                                    const Eigen::Ref<const Eigen::VectorXd>& y, double inv_std) {
    const double n = static_cast<double>(g.size());
    const double mean_g = g.sum() / n;
    const double mean_gy = g.dot(y) / n;
    return inv_std * (g.array() - mean_g - y.array() * mean_gy).matrix();
}

double cos_of(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

// Adds scale · dcos/da to da and scale · dcos/db to db.
void cos_backward(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                  double scale, Eigen::Ref<Eigen::VectorXd> da, Eigen::Ref<Eigen::VectorXd> db) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return;
    const double c = a.dot(b) / (na * nb);
    da += scale * (b / (na * nb) - c * a / (na * na));
    db += scale * (a / (na * nb) - c * b / (nb * nb));
}

void check_finite(const ModelState& grads) {
    grads.visit([](const std::string& name, const Eigen::MatrixXd& t, bool) {
        if (!t.allFinite()) throw NonFiniteGradient(name);
    });
}

}  // namespace

int ForwardTrace::local_of(int global_id) const {
    if (full) return global_id >= 0 && global_id < size() ? global_id : -1;
    const auto it = local_index.find(global_id);
    return it == local_index.end() ? -1 : it->second;
}

bool ForwardTrace::is_active(int k, int v) const {
    const auto& a = active[static_cast<std::size_t>(k)];
    return std::binary_search(a.begin(), a.end(), v);
}

double layer_norm(const Eigen::Ref<const Eigen::VectorXd>& in, Eigen::Ref<Eigen::VectorXd> out) {
    const double n = static_cast<double>(in.size());
    const double mean = in.sum() / n;
    const double var = (in.array() - mean).square().sum() / n;
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    out = ((in.array() - mean) * inv_std).matrix();
    return inv_std;
}

double salience_score(const HeteroGraph& graph, int slot, const Eigen::Ref<const Eigen::VectorXd>& h0_u,
                      const Eigen::Ref<const Eigen::VectorXd>& h0_v, const Eigen::Vector3d& weights) {
    const auto s = static_cast<std::size_t>(slot);
    return weights[0] * graph.slot_struct[s] + weights[1] * graph.slot_freq[s] + weights[2] * cos_of(h0_u, h0_v);
}

Eigen::VectorXd normalize_attention(const Eigen::VectorXd& logits, double tau) {
    if (logits.size() == 0) return logits;
    const Eigen::ArrayXd scaled = logits.array() / tau;
    const Eigen::ArrayXd e = (scaled - scaled.maxCoeff()).exp();
    return (e / e.sum()).matrix();
}

Eigen::VectorXd email_scores(const ForwardTrace& trace, int n_emails) {
    if (!trace.full) throw Error("email_scores needs a full pass");
    return trace.score.head(n_emails);
}

CogGnn::CogGnn(const HeteroGraph& graph, SemanticEncoder& encoder, std::string task_context)
    : graph_(graph), encoder_(encoder), task_(std::move(task_context)) {
    if (!graph_.has_stats()) throw EmptyInput("graph has no structural statistics");
    slot_prompts_.resize(static_cast<std::size_t>(graph_.offsets().back()));
}

std::string CogGnn::prompt_text(int u, int v, Relation r, const NodeOverride* sample) const {
    NodeDescriptor a = u >= 0 ? graph_.descriptor(u) : NodeDescriptor{"email", {}};
    NodeDescriptor b = v >= 0 ? graph_.descriptor(v) : NodeDescriptor{"email", {}};
    if (sample != nullptr && sample->description) {
        if (u == sample->anchor) a.desc = *sample->description;
        if (v == sample->anchor) b.desc = *sample->description;
    }
    return render_pair_prompt(a, b, to_string(r), task_);
}

Embedding CogGnn::slot_prompt(int slot, int centre) {
    auto& cached = slot_prompts_[static_cast<std::size_t>(slot)];
    if (!cached) cached = encoder_.encode(prompt_text(graph_.neighbor(slot), centre, graph_.slot_relation(slot)));
    return cached;
}

std::shared_ptr<ForwardTrace> CogGnn::forward(const ModelState& model, bool training, std::uint64_t dropout_seed) {
    const Hyper& hy = model.hyper;
    if (graph_.feature_dim() != hy.d_in) {
        throw DimensionMismatch("graph features have dim " + std::to_string(graph_.feature_dim()) + ", model expects " +
                                std::to_string(hy.d_in));
    }
    if (encoder_.dim() != hy.d_p) {
        throw DimensionMismatch("encoder dim " + std::to_string(encoder_.dim()) + " != prompt dim " +
                                std::to_string(hy.d_p));
    }
    auto t = std::make_shared<ForwardTrace>();
    t->training = training;
    t->full = true;
    t->layers = hy.layers;
    const int n = static_cast<int>(graph_.size());
    t->global.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t->global[static_cast<std::size_t>(i)] = i;
    t->active.assign(static_cast<std::size_t>(hy.layers) + 1, t->global);
    t->x = graph_.features;

    t->pre0 = model.init_weight * t->x;
    t->pre0.colwise() += model.init_bias.col(0);
    t->h.assign(static_cast<std::size_t>(hy.layers) + 1, Eigen::MatrixXd());
    t->normed.assign(static_cast<std::size_t>(hy.layers) + 1, Eigen::MatrixXd());
    t->inv_std.assign(static_cast<std::size_t>(hy.layers) + 1, Eigen::VectorXd());
    t->normed[0].resize(hy.d_h, n);
    t->inv_std[0].resize(n);
    for (int v = 0; v < n; ++v) {
        const Eigen::VectorXd r = t->pre0.col(v).cwiseMax(0.0);
        t->inv_std[0][v] = layer_norm(r, t->normed[0].col(v));
    }
    t->h[0] = t->normed[0];

    const Eigen::MatrixXd& h0 = t->h[0];
    t->sel_begin.assign(static_cast<std::size_t>(n) + 1, 0);
    std::vector<std::pair<std::size_t, int>> missing;  // (pair, slot)
    std::vector<std::string> texts;
    for (int v = 0; v < n; ++v) {
        const auto slots = select(v, model, [&](int u) { return h0.col(u); });
        for (int s : slots) {
            t->pair_nbr.push_back(graph_.neighbor(s));
            t->pair_rel.push_back(graph_.slot_relation(s));
            const int u = graph_.neighbor(s);
            Eigen::Vector4d st;
            st << 0.0, std::log1p(graph_.degree(u)), std::log1p(graph_.degree(v)), 1.0 / (1.0 + 1.0);
            t->pair_struct.push_back(st);
            t->pair_prompt.push_back(slot_prompts_[static_cast<std::size_t>(s)]);
            if (!t->pair_prompt.back()) {
                missing.emplace_back(t->pair_prompt.size() - 1, s);
                texts.push_back(prompt_text(u, v, graph_.slot_relation(s)));
            }
        }
        t->sel_begin[static_cast<std::size_t>(v) + 1] = static_cast<int>(t->pair_nbr.size());
    }
    if (!missing.empty()) {
        const auto embeds = encoder_.encode_batch(texts);
        for (std::size_t i = 0; i < missing.size(); ++i) {
            slot_prompts_[static_cast<std::size_t>(missing[i].second)] = embeds[i];
            t->pair_prompt[missing[i].first] = embeds[i];
        }
    }
    run_layers(model, *t, dropout_seed);
    return t;
}

std::shared_ptr<ForwardTrace> CogGnn::forward_local(const ModelState& model, const NodeOverride& sample) {
    const Hyper& hy = model.hyper;
    if (sample.features.size() != hy.d_in) {
        throw DimensionMismatch("override features have dim " + std::to_string(sample.features.size()) +
                                ", model expects " + std::to_string(hy.d_in));
    }
    if (sample.anchor >= static_cast<int>(graph_.size())) throw Error("override anchor out of range");
    const bool isolated = sample.anchor < 0;
    if (!isolated && (!base_ || !base_->full || base_->size() != static_cast<int>(graph_.size()))) {
        throw Error("local pass needs a base evaluation pass over the graph");
    }

    auto t = std::make_shared<ForwardTrace>();
    t->training = false;
    t->full = false;
    t->layers = hy.layers;
    const auto add = [&](int g) {
        const auto [it, inserted] = t->local_index.try_emplace(g, t->size());
        if (inserted) t->global.push_back(g);
        return it->second;
    };
    add(sample.anchor);

    Eigen::VectorXd anchor_h0(hy.d_h);
    {
        const Eigen::VectorXd r = (model.init_weight * sample.features + model.init_bias.col(0)).cwiseMax(0.0);
        layer_norm(r, anchor_h0);
    }
    const auto h0_of = [&](int g) -> Eigen::VectorXd {
        if (g == sample.anchor) return anchor_h0;
        return base_->h[0].col(g);
    };

    std::unordered_map<int, std::vector<int>> selection;
    t->active.assign(static_cast<std::size_t>(hy.layers) + 1, {});
    t->active[static_cast<std::size_t>(hy.layers)] = {0};
    for (int k = hy.layers; k >= 1; --k) {
        std::set<int> next(t->active[static_cast<std::size_t>(k)].begin(), t->active[static_cast<std::size_t>(k)].end());
        if (!isolated) {
            for (int c : t->active[static_cast<std::size_t>(k)]) {
                const int g = t->global[static_cast<std::size_t>(c)];
                auto it = selection.find(g);
                if (it == selection.end()) it = selection.emplace(g, select(g, model, h0_of)).first;
                for (int s : it->second) next.insert(add(graph_.neighbor(s)));
            }
        }
        t->active[static_cast<std::size_t>(k) - 1].assign(next.begin(), next.end());
    }
    const int n = t->size();

    t->sel_begin.assign(static_cast<std::size_t>(n) + 1, 0);
    for (int v = 0; v < n; ++v) {
        const int gv = t->global[static_cast<std::size_t>(v)];
        const auto it = selection.find(gv);
        if (it != selection.end()) {
            for (int s : it->second) {
                const int gu = graph_.neighbor(s);
                t->pair_nbr.push_back(t->local_index.at(gu));
                t->pair_rel.push_back(graph_.slot_relation(s));
                Eigen::Vector4d st;
                st << 0.0, std::log1p(graph_.degree(gu)), std::log1p(graph_.degree(gv)), 1.0 / (1.0 + 1.0);
                t->pair_struct.push_back(st);
                if (sample.description && (gu == sample.anchor || gv == sample.anchor)) {
                    t->pair_prompt.push_back(encoder_.encode(prompt_text(gu, gv, graph_.slot_relation(s), &sample)));
                } else {
                    t->pair_prompt.push_back(slot_prompt(s, gv));
                }
            }
        }
        t->sel_begin[static_cast<std::size_t>(v) + 1] = static_cast<int>(t->pair_nbr.size());
    }

    t->x.resize(hy.d_in, n);
    {
        std::vector<Eigen::Triplet<double>> trips;
        for (int v = 0; v < n; ++v) {
            const int g = t->global[static_cast<std::size_t>(v)];
            if (g == sample.anchor) {
                for (Eigen::Index i = 0; i < sample.features.size(); ++i) {
                    if (sample.features[i] != 0.0) trips.emplace_back(static_cast<int>(i), v, sample.features[i]);
                }
            } else {
                for (Eigen::SparseMatrix<double>::InnerIterator it(graph_.features, g); it; ++it) {
                    trips.emplace_back(static_cast<int>(it.row()), v, it.value());
                }
            }
        }
        t->x.setFromTriplets(trips.begin(), trips.end());
    }
    t->pre0 = model.init_weight * t->x;
    t->pre0.colwise() += model.init_bias.col(0);
    t->h.assign(static_cast<std::size_t>(hy.layers) + 1, Eigen::MatrixXd());
    t->normed.assign(static_cast<std::size_t>(hy.layers) + 1, Eigen::MatrixXd());
    t->inv_std.assign(static_cast<std::size_t>(hy.layers) + 1, Eigen::VectorXd());
    t->normed[0].resize(hy.d_h, n);
    t->inv_std[0].resize(n);
    for (int v = 0; v < n; ++v) {
        const Eigen::VectorXd r = t->pre0.col(v).cwiseMax(0.0);
        t->inv_std[0][v] = layer_norm(r, t->normed[0].col(v));
    }
    t->h[0] = t->normed[0];
    run_layers(model, *t, 0);
    return t;
}

void CogGnn::run_layers(const ModelState& model, ForwardTrace& t, std::uint64_t dropout_seed) {
    const Hyper& hy = model.hyper;
    const int n = t.size();
    const Eigen::Index pairs = t.pair_count();

    t.attn_hidden.resize(hy.attn_hidden, pairs);
    t.attn_mlp.resize(pairs);
    t.base_logit.resize(pairs);
    for (Eigen::Index start = 0; start < pairs; start += kMlpChunk) {
        const Eigen::Index len = std::min(kMlpChunk, pairs - start);
        Eigen::MatrixXd prompts(hy.d_p, len);
        for (Eigen::Index j = 0; j < len; ++j) prompts.col(j) = *t.pair_prompt[static_cast<std::size_t>(start + j)];
        Eigen::MatrixXd z = model.attn_w1 * prompts;
        z.colwise() += model.attn_b1.col(0);
        t.attn_hidden.middleCols(start, len) = z.cwiseMax(0.0);
        const Eigen::RowVectorXd o = model.attn_w2 * t.attn_hidden.middleCols(start, len);
        for (Eigen::Index j = 0; j < len; ++j) t.attn_mlp[start + j] = sigmoid(o[j] + model.attn_b2(0, 0));
    }
    const Eigen::Vector4d ws = model.struct_weight.col(0);
    for (Eigen::Index p = 0; p < pairs; ++p) {
        auto& st = t.pair_struct[static_cast<std::size_t>(p)];
        st[0] = model.relation_weight(static_cast<int>(t.pair_rel[static_cast<std::size_t>(p)]), 0);
        t.base_logit[p] = t.attn_mlp[p] + hy.beta * ws.dot(st);
    }

    const auto L = static_cast<std::size_t>(hy.layers);
    t.pre.assign(L + 1, Eigen::MatrixXd());
    t.mask.assign(L + 1, Eigen::MatrixXd());
    t.neigh_msg.assign(L + 1, Eigen::MatrixXd());
    t.edge_msg.assign(L + 1, Eigen::MatrixXd());
    t.logit.assign(L, Eigen::VectorXd::Zero(pairs));
    t.alpha.assign(L, Eigen::VectorXd::Zero(pairs));
    Rng rng(mix_seed(dropout_seed, 0x64726f70ULL));
    const double keep = 1.0 - hy.dropout;

    for (std::size_t k = 1; k <= L; ++k) {
        const auto& lp = model.layers[k - 1];
        const Eigen::MatrixXd& prev = t.h[k - 1];
        t.neigh_msg[k] = lp.neigh * prev;
        t.edge_msg[k] = lp.edge * model.relation_embed.transpose();
        const Eigen::MatrixXd self_term = lp.self * prev;
        t.pre[k] = Eigen::MatrixXd::Zero(hy.d_h, n);
        t.normed[k] = Eigen::MatrixXd::Zero(hy.d_h, n);
        t.inv_std[k] = Eigen::VectorXd::Zero(n);
        t.h[k] = Eigen::MatrixXd::Zero(hy.d_h, n);
        if (t.training && hy.dropout > 0.0) {
            t.mask[k].resize(hy.d_h, n);
            for (int v = 0; v < n; ++v) {
                for (int i = 0; i < hy.d_h; ++i) t.mask[k](i, v) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
            }
        }
        auto& logit = t.logit[k - 1];
        auto& alpha = t.alpha[k - 1];
        for (int v : t.active[k]) {
            const int b = t.sel_begin[static_cast<std::size_t>(v)];
            const int e = t.sel_begin[static_cast<std::size_t>(v) + 1];
            Eigen::VectorXd m = Eigen::VectorXd::Zero(hy.d_h);
            if (e > b) {
                for (int p = b; p < e; ++p) {
                    logit[p] = t.base_logit[p] + hy.gamma * cos_of(prev.col(t.pair_nbr[static_cast<std::size_t>(p)]), prev.col(v));
                }
                alpha.segment(b, e - b) = normalize_attention(logit.segment(b, e - b), hy.tau);
                for (int p = b; p < e; ++p) {
                    m += alpha[p] * (t.neigh_msg[k].col(t.pair_nbr[static_cast<std::size_t>(p)]) +
                                     t.edge_msg[k].col(static_cast<int>(t.pair_rel[static_cast<std::size_t>(p)])));
                }
            }
            t.pre[k].col(v) = self_term.col(v) + m + lp.bias.col(0);
            const Eigen::VectorXd r = t.pre[k].col(v).cwiseMax(0.0);
            t.inv_std[k][v] = layer_norm(r, t.normed[k].col(v));
            if (t.mask[k].size() > 0) {
                t.h[k].col(v) = t.normed[k].col(v) + t.mask[k].col(v).cwiseProduct(prev.col(v));
            } else {
                t.h[k].col(v) = t.normed[k].col(v) + prev.col(v);
            }
        }
    }

    t.score = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    for (int v : t.active[L]) {
        double z = model.out_bias(0, 0);
        for (std::size_t k = 1; k <= L; ++k) {
            z += model.out_weight.block(0, static_cast<Eigen::Index>(k - 1) * hy.d_h, 1, hy.d_h).row(0).dot(t.h[k].col(v));
        }
        t.score[v] = sigmoid(z);
    }
}

std::vector<Eigen::VectorXd> CogGnn::backward(const ModelState& model, const ForwardTrace& t,
                                              const BackwardRequest& request, ModelState* grads) const {
    const Hyper& hy = model.hyper;
    const auto L = static_cast<std::size_t>(t.layers);
    const int n = t.size();
    const Eigen::Index pairs = t.pair_count();
    std::vector<Eigen::MatrixXd> dh(L + 1, Eigen::MatrixXd::Zero(hy.d_h, n));

    for (const auto& [v, dy] : request.seeds) {
        if (v < 0 || v >= n || !t.is_active(static_cast<int>(L), v)) throw Error("backward seed is not an output node");
        const double y = t.score[v];
        const double dz = dy * y * (1.0 - y);
        if (grads) grads->out_bias(0, 0) += dz;
        for (std::size_t k = 1; k <= L; ++k) {
            const Eigen::Index off = static_cast<Eigen::Index>(k - 1) * hy.d_h;
            if (grads) grads->out_weight.block(0, off, 1, hy.d_h) += dz * t.h[k].col(v).transpose();
            dh[k].col(v) += dz * model.out_weight.block(0, off, 1, hy.d_h).transpose();
        }
    }

    Eigen::VectorXd dbase = Eigen::VectorXd::Zero(pairs);
    for (std::size_t k = L; k >= 1; --k) {
        const auto& lp = model.layers[k - 1];
        const Eigen::MatrixXd& prev = t.h[k - 1];
        Eigen::MatrixXd dpre = Eigen::MatrixXd::Zero(hy.d_h, n);
        for (int v : t.active[k]) {
            const auto g = dh[k].col(v);
            if (t.mask[k].size() > 0) {
                dh[k - 1].col(v) += t.mask[k].col(v).cwiseProduct(g);
            } else {
                dh[k - 1].col(v) += g;
            }
            const Eigen::VectorXd dr = layer_norm_backward(g, t.normed[k].col(v), t.inv_std[k][v]);
            dpre.col(v) = dr.cwiseProduct((t.pre[k].col(v).array() > 0.0).cast<double>().matrix());
        }
        Eigen::MatrixXd dneigh = Eigen::MatrixXd::Zero(hy.d_h, n);
        Eigen::MatrixXd dedge = Eigen::MatrixXd::Zero(hy.d_h, kRelationCount);
        const auto& alpha = t.alpha[k - 1];
        for (int v : t.active[k]) {
            const int b = t.sel_begin[static_cast<std::size_t>(v)];
            const int e = t.sel_begin[static_cast<std::size_t>(v) + 1];
            if (e == b) continue;
            const auto gv = dpre.col(v);
            Eigen::VectorXd dalpha(e - b);
            for (int p = b; p < e; ++p) {
                const int u = t.pair_nbr[static_cast<std::size_t>(p)];
                const int r = static_cast<int>(t.pair_rel[static_cast<std::size_t>(p)]);
                dalpha[p - b] = gv.dot(t.neigh_msg[k].col(u) + t.edge_msg[k].col(r));
                dneigh.col(u) += alpha[p] * gv;
                dedge.col(r) += alpha[p] * gv;
            }
            const double s = alpha.segment(b, e - b).dot(dalpha);
            for (int p = b; p < e; ++p) {
                const double de = alpha[p] / hy.tau * (dalpha[p - b] - s);
                dbase[p] += de;
                if (hy.gamma != 0.0 && de != 0.0) {
                    const int u = t.pair_nbr[static_cast<std::size_t>(p)];
                    if (u == v) {
                        Eigen::VectorXd acc = Eigen::VectorXd::Zero(hy.d_h);
                        Eigen::VectorXd acc2 = Eigen::VectorXd::Zero(hy.d_h);
                        cos_backward(prev.col(u), prev.col(v), hy.gamma * de, acc, acc2);
                        dh[k - 1].col(v) += acc + acc2;
                    } else {
                        cos_backward(prev.col(u), prev.col(v), hy.gamma * de, dh[k - 1].col(u), dh[k - 1].col(v));
                    }
                }
            }
        }
        if (grads) {
            auto& gl = grads->layers[k - 1];
            gl.self.noalias() += dpre * prev.transpose();
            gl.bias.col(0) += dpre.rowwise().sum();
            gl.neigh.noalias() += dneigh * prev.transpose();
            gl.edge.noalias() += dedge * model.relation_embed;
            grads->relation_embed.noalias() += (lp.edge.transpose() * dedge).transpose();
        }
        dh[k - 1].noalias() += lp.self.transpose() * dpre;
        dh[k - 1].noalias() += lp.neigh.transpose() * dneigh;
    }

    if (grads && pairs > 0) {
        const Eigen::Vector4d ws = model.struct_weight.col(0);
        Eigen::VectorXd dmlp(pairs);
        for (Eigen::Index p = 0; p < pairs; ++p) {
            const double g = dbase[p];
            grads->struct_weight.col(0) += hy.beta * g * t.pair_struct[static_cast<std::size_t>(p)];
            grads->relation_weight(static_cast<int>(t.pair_rel[static_cast<std::size_t>(p)]), 0) += hy.beta * g * ws[0];
            const double o = t.attn_mlp[p];
            dmlp[p] = g * o * (1.0 - o);
        }
        for (Eigen::Index start = 0; start < pairs; start += kMlpChunk) {
            const Eigen::Index len = std::min(kMlpChunk, pairs - start);
            const auto hidden = t.attn_hidden.middleCols(start, len);
            const auto d = dmlp.segment(start, len);
            grads->attn_w2.row(0) += (hidden * d).transpose();
            grads->attn_b2(0, 0) += d.sum();
            Eigen::MatrixXd dz = model.attn_w2.transpose() * d.transpose();
            dz.array() *= (hidden.array() > 0.0).cast<double>();
            Eigen::MatrixXd prompts(hy.d_p, len);
            for (Eigen::Index j = 0; j < len; ++j) prompts.col(j) = *t.pair_prompt[static_cast<std::size_t>(start + j)];
            grads->attn_w1.noalias() += dz * prompts.transpose();
            grads->attn_b1.col(0) += dz.rowwise().sum();
        }
    }

    Eigen::MatrixXd dpre0 = Eigen::MatrixXd::Zero(hy.d_h, n);
    for (int v : t.active[0]) {
        const Eigen::VectorXd dr = layer_norm_backward(dh[0].col(v), t.normed[0].col(v), t.inv_std[0][v]);
        dpre0.col(v) = dr.cwiseProduct((t.pre0.col(v).array() > 0.0).cast<double>().matrix());
    }
    if (grads) {
        grads->init_weight += dpre0 * t.x.transpose();
        grads->init_bias.col(0) += dpre0.rowwise().sum();
        check_finite(*grads);
    }
    std::vector<Eigen::VectorXd> inputs;
    for (int c : request.input_columns) {
        if (c < 0 || c >= n) throw Error("input column out of range");
        Eigen::VectorXd g = model.init_weight.transpose() * dpre0.col(c);
        if (!g.allFinite()) throw NonFiniteGradient("input");
        inputs.push_back(std::move(g));
    }
    return inputs;
}

}  // namespace evomail
