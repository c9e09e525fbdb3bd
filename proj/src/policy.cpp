#include "scenepref/policy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scenepref/errors.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

namespace {

// Feature one-hot dimensions inside the context embeddings; the output
// projection gets a matching bump so naming a present feature is likelier
// than naming an absent one.
int feature_dim(const std::string& word) {
  if (word == "smile") return 0;
  if (word == "frown") return 1;
  if (word == "neutral") return 2;
  if (word == "flat") return 3;
  if (word == "exaggerated") return 4;
  if (word == "match") return 5;
  if (word == "mismatch") return 6;
  return -1;
}

const std::vector<std::string>& slot_candidates(SlotKind kind) {
  static const std::vector<std::string> expr = {"smile", "frown", "neutral"};
  static const std::vector<std::string> tone = {"flat", "exaggerated", "calm"};
  static const std::vector<std::string> cong = {"match", "mismatch"};
  switch (kind) {
    case SlotKind::expr: return expr;
    case SlotKind::tone: return tone;
    case SlotKind::cong: return cong;
  }
  throw ConfigError("invalid slot kind");
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  Eigen::VectorXd out = (z.array() - z.maxCoeff()).exp();
  out /= out.sum();
  return out;
}

double log_softmax_at(const Eigen::VectorXd& z, int index) {
  double m = z.maxCoeff();
  double lse = m + std::log((z.array() - m).exp().sum());
  return z(index) - lse;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  auto rows = j.at("rows").get<Eigen::Index>();
  auto cols = j.at("cols").get<Eigen::Index>();
  auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw SchemaError("tensor data length does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++];
  return m;
}

void hash_matrix(std::ostringstream& os, const Eigen::MatrixXd& m) {
  os.precision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << m(r, c) << ',';
  os << ';';
}

bool matrix_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.empty()) throw ConfigError("vocabulary must be non-empty");
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) {
    if (!index_.emplace(words_[i], i).second) {
      throw ConfigError("duplicate vocabulary word \"" + words_[i] + "\"");
    }
  }
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " out of range");
  return words_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(std::string_view w) const {
  auto it = index_.find(w);
  if (it == index_.end()) throw VocabError("word \"" + std::string(w) + "\" not in vocabulary");
  return it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& w : util::split_whitespace(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int t : ids) words.push_back(word(t));
  return util::join(words, " ");
}

PolicyArch ToyPolicy::default_arch(int embed_dim, int n_styles) {
  PolicyArch arch;
  arch.vocab_words = {"the",  "speaker",    "shows", "a",        "smile",  "frown",
                      "neutral", "expression", "with",  "flat",     "exaggerated", "tone",
                      "and",  "reaction",   "seems", "to",       "match",  "mismatch",
                      "words", "delivery",  "that",  "look",     "calm",   "scene"};
  arch.embed_dim = embed_dim;
  arch.n_styles = n_styles;
  arch.max_positions = 20;

  auto T = [](std::vector<std::string> w) { return TemplateSpec{std::move(w)}; };
  // Prompt ids 0-4: the five candidate-generation prompts; 5 and 6: the two
  // inference prompts. Every prompt decodes through the same token layout
  // (17 words, feature slots at positions 4, 7, and 14); prompts still yield
  // different captions because each owns its own rows of the output table.
  // Keeping the surrounding words common means a chosen/rejected pair can
  // only differ at the feature slots, so preference gradients move feature
  // words instead of latching onto phrasing quirks of individual prompts.
  TemplateSpec shared = T({"the", "speaker", "shows", "a", "<expr>", "expression", "with",
                           "<tone>", "tone", "and", "the", "reaction", "seems", "to", "<cong>",
                           "the", "words"});
  arch.templates.assign(7, shared);
  arch.prompt_texts = {
      {"Describe what is happening in this video in detail."},
      {"Describe the video in such a way that it will be helpful for sarcasm detection. Try to "
       "keep the description brief."},
      {"Describe the facial expressions and the speech tone of the speakers that is useful to "
       "understand the subtle meaning of the conversation. Try to keep the description brief."},
      {"Describe the facial expressions in the video that might indicate contrasting emotions. "
       "Keep the description brief"},
      {"Provide a brief description of this video."},
      {"Describe the video in detail", "Describe the video in detail."},
      {"Describe the speaker's nonverbal cues, the context, and any mismatches between them",
       "Describe the speaker's nonverbal cues, the context, and any mismatches between them."},
  };
  return arch;
}

ToyPolicy::ToyPolicy(PolicyArch arch, PolicyInit init)
    : arch_(std::move(arch)), init_(init), vocab_(arch_.vocab_words) {
  if (arch_.embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (arch_.n_styles < 1) throw ConfigError("n_styles must be >= 1");
  if (arch_.templates.empty()) throw ConfigError("policy needs at least one template");
  if (arch_.prompt_texts.size() != arch_.templates.size()) {
    throw ConfigError("prompt_texts and templates must align");
  }

  for (std::size_t pid = 0; pid < arch_.templates.size(); ++pid) {
    CompiledTemplate ct;
    for (const auto& w : arch_.templates[pid].words) {
      if (w == "<expr>" || w == "<tone>" || w == "<cong>") {
        SlotKind kind = w == "<expr>" ? SlotKind::expr
                        : w == "<tone>" ? SlotKind::tone
                                        : SlotKind::cong;
        ct.slots.push_back({ct.length(), kind});
        ct.fixed.push_back(-1);
      } else {
        ct.fixed.push_back(vocab_.id(w));
      }
    }
    if (ct.length() > arch_.max_positions) {
      throw ConfigError("template " + std::to_string(pid) + " exceeds max_positions");
    }
    templates_.push_back(std::move(ct));
    for (const auto& text : arch_.prompt_texts[pid]) {
      if (!prompt_index_.emplace(text, static_cast<int>(pid)).second) {
        throw ConfigError("prompt text registered twice: \"" + text + "\"");
      }
    }
  }

  const int h = arch_.embed_dim;
  const int V = vocab_.size();
  const int P = arch_.max_positions;
  const int n_prompts = static_cast<int>(templates_.size());
  const int C = n_prompts + 3 + 2 + 2 + arch_.n_styles;

  // One generator, fixed draw order: ctx_emb, pos_emb, wq, wk, wv, wo, table.
  util::Rng rng(init_.seed);
  auto fill_noise = [&rng](Eigen::MatrixXd& m, double sigma) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = sigma * rng.normal();
  };

  ctx_emb_.resize(C, h);
  fill_noise(ctx_emb_, init_.ctx_noise);
  for (int p = 0; p < n_prompts; ++p) ctx_emb_(p, (11 + p) % h) += 1.0;
  for (int e = 0; e < 3; ++e) ctx_emb_(n_prompts + e, e % h) += 1.0;
  for (int t = 0; t < 2; ++t) ctx_emb_(n_prompts + 3 + t, (3 + t) % h) += 1.0;
  for (int c = 0; c < 2; ++c) ctx_emb_(n_prompts + 5 + c, (5 + c) % h) += 1.0;
  for (int s = 0; s < arch_.n_styles; ++s) ctx_emb_(n_prompts + 7 + s, (7 + s) % h) += 1.0;

  pos_emb_.resize(P, h);
  fill_noise(pos_emb_, 1.0 / std::sqrt(static_cast<double>(h)));

  wq_.resize(h, h);
  fill_noise(wq_, init_.proj_noise);
  wk_.resize(h, h);
  fill_noise(wk_, init_.proj_noise);
  wv_.resize(h, h);
  fill_noise(wv_, init_.proj_noise);
  wv_ += Eigen::MatrixXd::Identity(h, h);

  wo_.resize(V, h);
  fill_noise(wo_, init_.out_noise);
  for (int w = 0; w < V; ++w) {
    int d = feature_dim(vocab_.word(w));
    if (d >= 0) wo_(w, d % h) += init_.feature_gain;
  }

  table_.resize(static_cast<Eigen::Index>(n_prompts) * P, V);
  for (int p = 0; p < n_prompts; ++p) {
    const auto& ct = templates_[static_cast<std::size_t>(p)];
    for (int t = 0; t < P; ++t) {
      bool is_slot = false;
      for (const auto& s : ct.slots) is_slot |= (s.position == t);
      double sigma = is_slot ? init_.table_noise_slot : init_.table_noise_fixed;
      for (int w = 0; w < V; ++w) {
        table_(static_cast<Eigen::Index>(p) * P + t, w) = sigma * rng.normal();
      }
    }
    for (int t = 0; t < ct.length(); ++t) {
      if (ct.fixed[static_cast<std::size_t>(t)] >= 0) {
        table_(static_cast<Eigen::Index>(p) * P + t, ct.fixed[static_cast<std::size_t>(t)]) +=
            init_.table_fixed;
      }
    }
    for (const auto& s : ct.slots) {
      const auto cands = slot_candidates(s.kind);
      for (std::size_t k = 0; k < cands.size(); ++k) {
        double bump = init_.table_slot;
        if (p + 2 < n_prompts && k == static_cast<std::size_t>(p) % cands.size()) {
          bump += init_.table_stagger;
        }
        try {
          table_(static_cast<Eigen::Index>(p) * P + s.position, vocab_.id(cands[k])) += bump;
        } catch (const VocabError&) {
          // Tiny test arches may omit candidate words; they simply get no bump.
        }
      }
    }
  }
}

int ToyPolicy::prompt_id(std::string_view prompt_text) const {
  auto it = prompt_index_.find(prompt_text);
  if (it == prompt_index_.end()) {
    throw ConfigError("prompt text not registered with this policy: \"" +
                      std::string(prompt_text) + "\"");
  }
  return it->second;
}

const CompiledTemplate& ToyPolicy::prompt_template(int pid) const {
  if (pid < 0 || pid >= n_prompts()) throw ConfigError("prompt id out of range");
  return templates_[static_cast<std::size_t>(pid)];
}

void ToyPolicy::attach_adapter(const AdapterConfig& config) {
  if (frozen_) throw ConfigError("cannot attach an adapter to a frozen policy");
  if (config.rank < 1) throw ConfigError("adapter rank must be >= 1");
  if (config.scale <= 0) throw ConfigError("adapter scale must be > 0");
  if (config.dropout < 0 || config.dropout >= 1) throw ConfigError("dropout must be in [0,1)");

  const int h = arch_.embed_dim;
  const int V = vocab_.size();
  util::Rng rng(config.seed);
  std::map<std::string, LowRankAdapter> maps;
  for (const auto& name : config.target_maps) {
    int in = h, out = h;
    if (name == "q_proj" || name == "k_proj" || name == "v_proj") {
      in = out = h;
    } else if (name == "out_proj") {
      in = h;
      out = V;
    } else {
      throw ConfigError("unknown adapter target \"" + name + "\"");
    }
    if (config.rank > std::min(in, out)) {
      throw ConfigError("adapter rank " + std::to_string(config.rank) +
                        " exceeds the smaller dimension of " + name);
    }
    LowRankAdapter ad;
    ad.A.resize(config.rank, in);
    for (Eigen::Index r = 0; r < ad.A.rows(); ++r)
      for (Eigen::Index c = 0; c < ad.A.cols(); ++c) ad.A(r, c) = 0.05 * rng.normal();
    ad.B = Eigen::MatrixXd::Zero(out, config.rank);  // adapted map == base at init
    maps.emplace(name, std::move(ad));
  }
  adapter_ = config;
  adapter_maps_ = std::move(maps);
}

const AdapterConfig& ToyPolicy::adapter_config() const {
  if (!adapter_) throw ConfigError("policy has no adapter attached");
  return *adapter_;
}

const std::map<std::string, LowRankAdapter>& ToyPolicy::adapter_maps() const {
  return adapter_maps_;
}

std::map<std::string, LowRankAdapter>& ToyPolicy::mutable_adapter_maps() {
  if (frozen_) throw ConfigError("reference policy is frozen; parameter mutation rejected");
  return adapter_maps_;
}

int ToyPolicy::ctx_row(int item, int pid, const SceneFeatures& scene) const {
  const int n_prompts = static_cast<int>(templates_.size());
  switch (item) {
    case 0: return pid;
    case 1: return n_prompts + static_cast<int>(scene.expression);
    case 2: return n_prompts + 3 + static_cast<int>(scene.tone);
    case 3: return n_prompts + 5 + static_cast<int>(scene.congruence);
    case 4: return n_prompts + 7 + scene.style;
  }
  throw ConfigError("context item out of range");
}

struct ToyPolicy::Forward {
  std::vector<Eigen::VectorXd> x;        // raw ctx inputs
  std::vector<Eigen::VectorXd> xk, xv;   // dropout-masked adapter inputs
  std::vector<Eigen::VectorXd> k, v;
  std::vector<Eigen::VectorXd> pos_raw, pos_masked;
  std::vector<Eigen::VectorXd> q, att, a;
  int pid = 0;
  int n_positions = 0;
};

ToyPolicy::Forward ToyPolicy::forward(int pid, const SceneFeatures& scene,
                                      const DropoutMasks* masks) const {
  if (scene.style < 0 || scene.style >= arch_.n_styles) {
    throw ConfigError("scene style out of range");
  }
  const int h = arch_.embed_dim;
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));

  auto mask_for = [&](const std::string& name) -> const Eigen::VectorXd* {
    if (!masks) return nullptr;
    auto it = masks->find(name);
    return it == masks->end() ? nullptr : &it->second;
  };
  auto masked = [&](const Eigen::VectorXd& x, const Eigen::VectorXd* m) {
    return m ? Eigen::VectorXd(x.cwiseProduct(*m)) : x;
  };
  auto adapter_out = [&](const std::string& name, const Eigen::VectorXd& xm) -> Eigen::VectorXd {
    auto it = adapter_maps_.find(name);
    if (it == adapter_maps_.end()) return Eigen::VectorXd();
    double s = adapter_->scale / adapter_->rank;
    return s * (it->second.B * (it->second.A * xm));
  };

  Forward f;
  f.pid = pid;
  f.n_positions = arch_.max_positions;

  const Eigen::VectorXd* mq = mask_for("q_proj");
  const Eigen::VectorXd* mk = mask_for("k_proj");
  const Eigen::VectorXd* mv = mask_for("v_proj");

  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd x = ctx_emb_.row(ctx_row(i, pid, scene)).transpose();
    f.xk.push_back(masked(x, mk));
    f.xv.push_back(masked(x, mv));
    Eigen::VectorXd k = wk_ * x;
    Eigen::VectorXd ak = adapter_out("k_proj", f.xk.back());
    if (ak.size()) k += ak;
    Eigen::VectorXd v = wv_ * x;
    Eigen::VectorXd av = adapter_out("v_proj", f.xv.back());
    if (av.size()) v += av;
    f.x.push_back(std::move(x));
    f.k.push_back(std::move(k));
    f.v.push_back(std::move(v));
  }

  for (int t = 0; t < arch_.max_positions; ++t) {
    Eigen::VectorXd p = pos_emb_.row(t).transpose();
    Eigen::VectorXd pm = masked(p, mq);
    Eigen::VectorXd q = wq_ * p;
    Eigen::VectorXd aq = adapter_out("q_proj", pm);
    if (aq.size()) q += aq;

    Eigen::VectorXd scores(5);
    for (int i = 0; i < 5; ++i) scores(i) = q.dot(f.k[static_cast<std::size_t>(i)]) * inv_sqrt_h;
    Eigen::VectorXd att = softmax(scores);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(h);
    for (int i = 0; i < 5; ++i) a += att(i) * f.v[static_cast<std::size_t>(i)];

    f.pos_raw.push_back(std::move(p));
    f.pos_masked.push_back(std::move(pm));
    f.q.push_back(std::move(q));
    f.att.push_back(std::move(att));
    f.a.push_back(std::move(a));
  }
  return f;
}

namespace {

Eigen::VectorXd logits_at(const Eigen::MatrixXd& wo, const Eigen::MatrixXd& table,
                          const std::map<std::string, LowRankAdapter>& maps,
                          const std::optional<AdapterConfig>& cfg, const DropoutMasks* masks,
                          int max_positions, int pid, int t, const Eigen::VectorXd& a) {
  Eigen::VectorXd z = wo * a + table.row(static_cast<Eigen::Index>(pid) * max_positions + t).transpose();
  auto it = maps.find("out_proj");
  if (it != maps.end()) {
    Eigen::VectorXd am = a;
    if (masks) {
      auto mit = masks->find("out_proj");
      if (mit != masks->end()) am = a.cwiseProduct(mit->second);
    }
    z += (cfg->scale / cfg->rank) * (it->second.B * (it->second.A * am));
  }
  return z;
}

}  // namespace

std::vector<int> ToyPolicy::greedy_decode(int pid, const SceneFeatures& scene) const {
  const CompiledTemplate& ct = prompt_template(pid);
  Forward f = forward(pid, scene, nullptr);
  std::vector<int> out;
  for (int t = 0; t < ct.length(); ++t) {
    Eigen::VectorXd z = logits_at(wo_, table_, adapter_maps_, adapter_, nullptr,
                                  arch_.max_positions, pid, t, f.a[static_cast<std::size_t>(t)]);
    int best = 0;
    for (int w = 1; w < vocab_.size(); ++w) {
      if (z(w) > z(best)) best = w;  // ties keep the lowest token id
    }
    out.push_back(best);
  }
  return out;
}

double ToyPolicy::sequence_logprob(int pid, const SceneFeatures& scene,
                                   const std::vector<int>& tokens,
                                   const DropoutMasks* masks) const {
  if (static_cast<int>(tokens.size()) > arch_.max_positions) {
    throw ConfigError("token sequence longer than max_positions");
  }
  for (int tok : tokens) {
    if (tok < 0 || tok >= vocab_.size()) {
      throw VocabError("token id " + std::to_string(tok) + " outside the policy vocabulary");
    }
  }
  Forward f = forward(pid, scene, masks);
  double lp = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Eigen::VectorXd z = logits_at(wo_, table_, adapter_maps_, adapter_, masks,
                                  arch_.max_positions, pid, static_cast<int>(t), f.a[t]);
    lp += log_softmax_at(z, tokens[t]);
  }
  return lp;
}

void ToyPolicy::accumulate_logprob_grad(int pid, const SceneFeatures& scene,
                                        const std::vector<int>& tokens, double weight,
                                        AdapterGrads& grads, const DropoutMasks* masks) const {
  if (!adapter_) throw ConfigError("gradient requested but no adapter is attached");
  for (int tok : tokens) {
    if (tok < 0 || tok >= vocab_.size()) {
      throw VocabError("token id " + std::to_string(tok) + " outside the policy vocabulary");
    }
  }
  const int h = arch_.embed_dim;
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
  const double s = adapter_->scale / adapter_->rank;
  Forward f = forward(pid, scene, masks);

  auto has = [&](const char* name) { return adapter_maps_.count(name) > 0; };

  std::vector<Eigen::VectorXd> dk(5, Eigen::VectorXd::Zero(h));
  std::vector<Eigen::VectorXd> dv(5, Eigen::VectorXd::Zero(h));

  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Eigen::VectorXd z = logits_at(wo_, table_, adapter_maps_, adapter_, masks,
                                  arch_.max_positions, pid, static_cast<int>(t), f.a[t]);
    Eigen::VectorXd p = softmax(z);
    Eigen::VectorXd dz = -p * weight;
    dz(tokens[t]) += weight;  // d(logprob)/dlogits = onehot - softmax

    Eigen::VectorXd da = wo_.transpose() * dz;
    if (has("out_proj")) {
      const auto& ad = adapter_maps_.at("out_proj");
      Eigen::VectorXd am = f.a[t];
      const Eigen::VectorXd* mo = nullptr;
      if (masks) {
        auto it = masks->find("out_proj");
        if (it != masks->end()) mo = &it->second;
      }
      if (mo) am = f.a[t].cwiseProduct(*mo);
      auto& g = grads.at("out_proj");
      g.B += s * dz * (ad.A * am).transpose();
      g.A += s * ad.B.transpose() * dz * am.transpose();
      Eigen::VectorXd da_ad = s * ad.A.transpose() * (ad.B.transpose() * dz);
      if (mo) da_ad = da_ad.cwiseProduct(*mo);
      da += da_ad;
    }

    // a_t = sum_i att_i v_i
    Eigen::VectorXd datt(5);
    for (int i = 0; i < 5; ++i) {
      dv[static_cast<std::size_t>(i)] += f.att[t](i) * da;
      datt(i) = da.dot(f.v[static_cast<std::size_t>(i)]);
    }
    // softmax backward over attention scores
    double dot = f.att[t].dot(datt);
    Eigen::VectorXd dscore = (f.att[t].array() * (datt.array() - dot)).matrix();

    Eigen::VectorXd dq = Eigen::VectorXd::Zero(h);
    for (int i = 0; i < 5; ++i) {
      dq += dscore(i) * f.k[static_cast<std::size_t>(i)] * inv_sqrt_h;
      dk[static_cast<std::size_t>(i)] += dscore(i) * f.q[t] * inv_sqrt_h;
    }
    if (has("q_proj")) {
      const auto& ad = adapter_maps_.at("q_proj");
      auto& g = grads.at("q_proj");
      g.B += s * dq * (ad.A * f.pos_masked[t]).transpose();
      g.A += s * ad.B.transpose() * dq * f.pos_masked[t].transpose();
    }
  }

  if (has("k_proj")) {
    const auto& ad = adapter_maps_.at("k_proj");
    auto& g = grads.at("k_proj");
    for (int i = 0; i < 5; ++i) {
      g.B += s * dk[static_cast<std::size_t>(i)] * (ad.A * f.xk[static_cast<std::size_t>(i)]).transpose();
      g.A += s * ad.B.transpose() * dk[static_cast<std::size_t>(i)] *
             f.xk[static_cast<std::size_t>(i)].transpose();
    }
  }
  if (has("v_proj")) {
    const auto& ad = adapter_maps_.at("v_proj");
    auto& g = grads.at("v_proj");
    for (int i = 0; i < 5; ++i) {
      g.B += s * dv[static_cast<std::size_t>(i)] * (ad.A * f.xv[static_cast<std::size_t>(i)]).transpose();
      g.A += s * ad.B.transpose() * dv[static_cast<std::size_t>(i)] *
             f.xv[static_cast<std::size_t>(i)].transpose();
    }
  }
}

AdapterGrads ToyPolicy::zero_grads() const {
  if (!adapter_) throw ConfigError("policy has no adapter attached");
  AdapterGrads g;
  for (const auto& [name, ad] : adapter_maps_) {
    LowRankAdapter z;
    z.A = Eigen::MatrixXd::Zero(ad.A.rows(), ad.A.cols());
    z.B = Eigen::MatrixXd::Zero(ad.B.rows(), ad.B.cols());
    g.emplace(name, std::move(z));
  }
  return g;
}

void ToyPolicy::sgd_step(const AdapterGrads& grads, double learning_rate) {
  if (frozen_) throw ConfigError("reference policy is frozen; parameter mutation rejected");
  if (!adapter_) throw ConfigError("policy has no adapter attached");
  for (const auto& [name, g] : grads) {
    auto& ad = adapter_maps_.at(name);
    ad.A -= learning_rate * g.A;
    ad.B -= learning_rate * g.B;
  }
}

std::string ToyPolicy::base_fingerprint() const {
  std::ostringstream os;
  hash_matrix(os, ctx_emb_);
  hash_matrix(os, pos_emb_);
  hash_matrix(os, wq_);
  hash_matrix(os, wk_);
  hash_matrix(os, wv_);
  hash_matrix(os, wo_);
  hash_matrix(os, table_);
  return util::fnv1a64_hex(os.str());
}

nlohmann::json ToyPolicy::to_checkpoint() const {
  nlohmann::json arch = {
      {"vocab", arch_.vocab_words},
      {"n_styles", arch_.n_styles},
      {"embed_dim", arch_.embed_dim},
      {"max_positions", arch_.max_positions},
      {"prompt_texts", arch_.prompt_texts},
  };
  nlohmann::json templates = nlohmann::json::array();
  for (const auto& t : arch_.templates) templates.push_back(t.words);
  arch["templates"] = templates;

  nlohmann::json j = {
      {"format_version", 1},
      {"kind", "policy_checkpoint"},
      {"role", role_},
      {"frozen", frozen_},
      {"arch", arch},
      {"init",
       {{"seed", init_.seed},
        {"feature_gain", init_.feature_gain},
        {"out_noise", init_.out_noise},
        {"ctx_noise", init_.ctx_noise},
        {"proj_noise", init_.proj_noise},
        {"table_fixed", init_.table_fixed},
        {"table_slot", init_.table_slot},
        {"table_noise_fixed", init_.table_noise_fixed},
        {"table_noise_slot", init_.table_noise_slot},
        {"table_stagger", init_.table_stagger}}},
      {"tensors",
       {{"ctx_emb", matrix_to_json(ctx_emb_)},
        {"pos_emb", matrix_to_json(pos_emb_)},
        {"q_proj", matrix_to_json(wq_)},
        {"k_proj", matrix_to_json(wk_)},
        {"v_proj", matrix_to_json(wv_)},
        {"out_proj", matrix_to_json(wo_)},
        {"table", matrix_to_json(table_)}}},
      {"base_fingerprint", base_fingerprint()},
  };
  if (adapter_) {
    nlohmann::json maps;
    for (const auto& [name, ad] : adapter_maps_) {
      maps[name] = {{"A", matrix_to_json(ad.A)}, {"B", matrix_to_json(ad.B)}};
    }
    j["adapter"] = {{"config",
                     {{"rank", adapter_->rank},
                      {"scale", adapter_->scale},
                      {"dropout", adapter_->dropout},
                      {"target_maps", adapter_->target_maps},
                      {"seed", adapter_->seed}}},
                    {"maps", maps}};
  }
  return j;
}

ToyPolicy ToyPolicy::from_checkpoint(const nlohmann::json& j) {
  if (j.value("kind", "") != "policy_checkpoint") {
    throw SchemaError("not a policy checkpoint");
  }
  PolicyArch arch;
  const auto& ja = j.at("arch");
  arch.vocab_words = ja.at("vocab").get<std::vector<std::string>>();
  arch.n_styles = ja.at("n_styles").get<int>();
  arch.embed_dim = ja.at("embed_dim").get<int>();
  arch.max_positions = ja.at("max_positions").get<int>();
  arch.prompt_texts = ja.at("prompt_texts").get<std::vector<std::vector<std::string>>>();
  for (const auto& t : ja.at("templates")) {
    arch.templates.push_back({t.get<std::vector<std::string>>()});
  }
  PolicyInit init;
  const auto& ji = j.at("init");
  init.seed = ji.at("seed").get<std::uint64_t>();
  init.feature_gain = ji.at("feature_gain").get<double>();
  init.out_noise = ji.at("out_noise").get<double>();
  init.ctx_noise = ji.at("ctx_noise").get<double>();
  init.proj_noise = ji.at("proj_noise").get<double>();
  init.table_fixed = ji.at("table_fixed").get<double>();
  init.table_slot = ji.at("table_slot").get<double>();
  init.table_noise_fixed = ji.at("table_noise_fixed").get<double>();
  init.table_noise_slot = ji.at("table_noise_slot").get<double>();
  init.table_stagger = ji.at("table_stagger").get<double>();

  ToyPolicy p(std::move(arch), init);
  const auto& jt = j.at("tensors");
  p.ctx_emb_ = matrix_from_json(jt.at("ctx_emb"));
  p.pos_emb_ = matrix_from_json(jt.at("pos_emb"));
  p.wq_ = matrix_from_json(jt.at("q_proj"));
  p.wk_ = matrix_from_json(jt.at("k_proj"));
  p.wv_ = matrix_from_json(jt.at("v_proj"));
  p.wo_ = matrix_from_json(jt.at("out_proj"));
  p.table_ = matrix_from_json(jt.at("table"));

  if (j.contains("adapter")) {
    const auto& jad = j.at("adapter");
    AdapterConfig cfg;
    cfg.rank = jad.at("config").at("rank").get<int>();
    cfg.scale = jad.at("config").at("scale").get<double>();
    cfg.dropout = jad.at("config").at("dropout").get<double>();
    cfg.target_maps = jad.at("config").at("target_maps").get<std::vector<std::string>>();
    cfg.seed = jad.at("config").at("seed").get<std::uint64_t>();
    p.attach_adapter(cfg);
    for (auto& [name, ad] : p.adapter_maps_) {
      ad.A = matrix_from_json(jad.at("maps").at(name).at("A"));
      ad.B = matrix_from_json(jad.at("maps").at(name).at("B"));
    }
  }
  p.role_ = j.value("role", "policy");
  if (j.value("frozen", false)) p.freeze();

  std::string expected = j.value("base_fingerprint", "");
  if (!expected.empty() && expected != p.base_fingerprint()) {
    throw SchemaError("checkpoint base fingerprint mismatch");
  }
  return p;
}

bool ToyPolicy::operator==(const ToyPolicy& other) const {
  if (arch_.vocab_words != other.arch_.vocab_words) return false;
  if (!matrix_equal(ctx_emb_, other.ctx_emb_) || !matrix_equal(pos_emb_, other.pos_emb_) ||
      !matrix_equal(wq_, other.wq_) || !matrix_equal(wk_, other.wk_) ||
      !matrix_equal(wv_, other.wv_) || !matrix_equal(wo_, other.wo_) ||
      !matrix_equal(table_, other.table_)) {
    return false;
  }
  if (adapter_maps_.size() != other.adapter_maps_.size()) return false;
  for (const auto& [name, ad] : adapter_maps_) {
    auto it = other.adapter_maps_.find(name);
    if (it == other.adapter_maps_.end()) return false;
    if (!matrix_equal(ad.A, it->second.A) || !matrix_equal(ad.B, it->second.B)) return false;
  }
  return true;
}

}  // namespace scenepref
