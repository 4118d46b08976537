#include "molrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace molrl {

namespace {

using nn::Tensor;

Tensor linear(const nn::ParamStore& p, const std::string& name, const Tensor& x) {
  return nn::add_row(nn::matmul(x, p.get(name + ".w")), p.get(name + ".b"));
}

Tensor unit_column(int n, int k) {
  std::vector<double> v(n, 0.0);
  v[k] = 1.0;
  return Tensor::constant(n, 1, std::move(v));
}

Tensor column_of(const Tensor& x, int k) { return nn::matmul(x, unit_column(x.cols(), k)); }

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void NetConfig::validate() const {
  if (interactions < 0) throw std::invalid_argument("net.interactions must be >= 0");
  if (width <= 0) throw std::invalid_argument("net.width must be positive");
  if (!(cutoff > 0)) throw std::invalid_argument("net.cutoff must be positive");
  if (num_rbf < 2) throw std::invalid_argument("net.num_rbf must be >= 2");
  if (!(rbf_gamma > 0)) throw std::invalid_argument("net.rbf_gamma must be positive");
  if (!(d_min > 0) || !(d_max > d_min)) throw std::invalid_argument("need 0 < net.d_min < net.d_max");
  if (!(init_sigma_d > 0) || !(init_sigma_alpha > 0) || !(init_sigma_psi > 0)) {
    throw std::invalid_argument("initial sigmas must be positive");
  }
}

void to_json(Json& j, const NetConfig& c) {
  j = Json{{"interactions", c.interactions}, {"width", c.width},
           {"cutoff", c.cutoff},             {"num_rbf", c.num_rbf},
           {"rbf_gamma", c.rbf_gamma},       {"d_min", c.d_min},
           {"d_max", c.d_max},               {"init_sigma_d", c.init_sigma_d},
           {"init_sigma_alpha", c.init_sigma_alpha}, {"init_sigma_psi", c.init_sigma_psi}};
}

void from_json(const Json& j, NetConfig& c) {
  NetConfig d;
  c.interactions = j.value("interactions", d.interactions);
  c.width = j.value("width", d.width);
  c.cutoff = j.value("cutoff", d.cutoff);
  c.num_rbf = j.value("num_rbf", d.num_rbf);
  c.rbf_gamma = j.value("rbf_gamma", d.rbf_gamma);
  c.d_min = j.value("d_min", d.d_min);
  c.d_max = j.value("d_max", d.d_max);
  c.init_sigma_d = j.value("init_sigma_d", d.init_sigma_d);
  c.init_sigma_alpha = j.value("init_sigma_alpha", d.init_sigma_alpha);
  c.init_sigma_psi = j.value("init_sigma_psi", d.init_sigma_psi);
}

std::uint64_t NetConfig::hash() const {
  std::ostringstream s;
  s.precision(17);
  s << "net:" << interactions << ':' << width << ':' << cutoff << ':' << num_rbf << ':' << rbf_gamma << ':' << d_min
    << ':' << d_max;
  return fnv1a(s.str());
}

std::array<double, kNumElements> bag_features(const Bag& bag) {
  std::array<double, kNumElements> f{};
  for (int e = 0; e < kNumElements; ++e) f[e] = 0.25 * bag.counts()[e];
  return f;
}

// ---------------------------------------------------------------------------

struct Policy::Trunk {
  Tensor h;      // [N x w]
  Tensor h_ext;  // [N+1 x w], zero last row used as the focal feature of an empty canvas
  Tensor bag;    // [B x w]
  Tensor pooled;  // [B x w], per-state mean of h (zero for an empty canvas)
  std::vector<int> offset;
  std::vector<int> count;
  std::vector<int> segment;
  int n_atoms = 0;
  int batch = 0;
};

void Policy::add_linear(const std::string& name, int in, int out, Rng& rng) {
  const double bound = std::sqrt(1.0 / in);
  std::vector<double> w(static_cast<std::size_t>(in) * out);
  for (double& x : w) x = rng.uniform(-bound, bound);
  params_.add(name + ".w", in, out, std::move(w));
  params_.add(name + ".b", 1, out, std::vector<double>(out, 0.0));
}

void Policy::add_mlp(const std::string& prefix, int in, int hidden, int out, Rng& rng) {
  add_linear(prefix + ".0", in, hidden, rng);
  add_linear(prefix + ".1", hidden, out, rng);
}

Policy::Policy(NetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x706f6c6963790000ULL));
  const int w = cfg_.width;
  auto table = [&](const std::string& name, int rows) {
    const double bound = std::sqrt(1.0 / rows);
    std::vector<double> v(static_cast<std::size_t>(rows) * w);
    for (double& x : v) x = rng.uniform(-bound, bound);
    params_.add(name, rows, w, std::move(v));
  };
  table("embed.atoms", kNumElements);
  add_linear("embed.rbf", cfg_.num_rbf, w, rng);
  for (int l = 0; l < cfg_.interactions; ++l) {
    const std::string p = "interaction" + std::to_string(l);
    add_linear(p + ".filter", w, w, rng);
    {
      const double bound = std::sqrt(1.0 / w);
      std::vector<double> v(static_cast<std::size_t>(w) * w);
      for (double& x : v) x = rng.uniform(-bound, bound);
      params_.add(p + ".in.w", w, w, std::move(v));
    }
    add_mlp(p + ".out", w, w, w, rng);
  }
  add_linear("bag", kNumElements, w, rng);
  add_mlp("focus", w, w, 1, rng);
  add_mlp("element", 2 * w, w, kNumElements, rng);
  table("spatial.embed", kNumElements);
  add_mlp("spatial", 2 * w, w, 3, rng);
  add_mlp("critic", 2 * w, w, 1, rng);
  params_.add("log_sigma", 1, 3,
              {std::log(cfg_.init_sigma_d), std::log(cfg_.init_sigma_alpha), std::log(cfg_.init_sigma_psi)});
}

Tensor Policy::mlp(const std::string& prefix, const Tensor& x) const {
  return linear(params_, prefix + ".1", nn::shifted_softplus(linear(params_, prefix + ".0", x)));
}

Policy::Trunk Policy::run_trunk(std::span<const State* const> states) const {
  Trunk t;
  t.batch = static_cast<int>(states.size());
  std::vector<int> elements;
  std::vector<const Vec3*> positions;
  std::vector<double> bag_rows;
  for (int b = 0; b < t.batch; ++b) {
    const Canvas& c = states[b]->canvas;
    t.offset.push_back(static_cast<int>(elements.size()));
    t.count.push_back(static_cast<int>(c.size()));
    for (const auto& a : c.atoms()) {
      elements.push_back(index_of(a.element));
      positions.push_back(&a.position);
      t.segment.push_back(b);
    }
    const auto f = bag_features(states[b]->bag);
    bag_rows.insert(bag_rows.end(), f.begin(), f.end());
  }
  t.n_atoms = static_cast<int>(elements.size());
  const int n = t.n_atoms;

  // Directed neighbour pairs (dst <- src) within each molecule and inside the cutoff.
  std::vector<int> src, dst;
  std::vector<double> dist, fcut;
  for (int b = 0; b < t.batch; ++b) {
    const int o = t.offset[b];
    for (int i = 0; i < t.count[b]; ++i) {
      for (int j = 0; j < t.count[b]; ++j) {
        if (i == j) continue;
        const double r = distance(*positions[o + i], *positions[o + j]);
        if (r >= cfg_.cutoff) continue;
        dst.push_back(o + i);
        src.push_back(o + j);
        dist.push_back(r);
        fcut.push_back(0.5 * (std::cos(kPi * r / cfg_.cutoff) + 1.0));
      }
    }
  }

  Tensor h = nn::gather_rows(params_.get("embed.atoms"), elements);
  if (!dist.empty() && cfg_.interactions > 0) {
    const Tensor rbf = nn::radial_basis(Tensor::column(dist), cfg_.num_rbf, cfg_.cutoff, cfg_.rbf_gamma);
    const Tensor cut = Tensor::column(fcut);
    const Tensor edge = nn::shifted_softplus(linear(params_, "embed.rbf", rbf));
    for (int l = 0; l < cfg_.interactions; ++l) {
      const std::string p = "interaction" + std::to_string(l);
      const Tensor filter = nn::mul_col(linear(params_, p + ".filter", edge), cut);
      const Tensor x = nn::matmul(h, params_.get(p + ".in.w"));
      const Tensor messages = nn::mul(nn::gather_rows(x, src), filter);
      const Tensor agg = nn::scatter_add_rows(messages, dst, n);
      h = nn::add(h, mlp(p + ".out", agg));
    }
  } else if (cfg_.interactions > 0 && n > 0) {
    // No neighbours anywhere: every message is zero.
    const Tensor zero = Tensor::zeros(n, cfg_.width);
    for (int l = 0; l < cfg_.interactions; ++l) {
      h = nn::add(h, mlp("interaction" + std::to_string(l) + ".out", zero));
    }
  }
  t.h = h;

  std::vector<int> identity(n);
  for (int i = 0; i < n; ++i) identity[i] = i;
  t.h_ext = nn::scatter_add_rows(h, identity, n + 1);

  t.bag = nn::shifted_softplus(linear(params_, "bag", Tensor::constant(t.batch, kNumElements, std::move(bag_rows))));

  std::vector<double> inv(t.batch);
  for (int b = 0; b < t.batch; ++b) inv[b] = t.count[b] > 0 ? 1.0 / t.count[b] : 0.0;
  t.pooled = nn::mul_col(nn::scatter_add_rows(h, t.segment, t.batch), Tensor::column(std::move(inv)));
  return t;
}

Tensor Policy::focus_log_softmax(const Trunk& t) const {
  return nn::segment_log_softmax(mlp("focus", t.h), t.segment, t.batch);
}

Tensor Policy::focal_features(const Trunk& t, std::span<const int> focus) const {
  std::vector<int> rows(t.batch);
  for (int b = 0; b < t.batch; ++b) {
    if (t.count[b] == 0) {
      rows[b] = t.n_atoms;
    } else {
      if (focus[b] < 0 || focus[b] >= t.count[b]) throw std::out_of_range("focus index out of range");
      rows[b] = t.offset[b] + focus[b];
    }
  }
  return nn::gather_rows(t.h_ext, rows);
}

Tensor Policy::element_log_softmax(const Trunk& t, const Tensor& focal, std::span<const State* const> states) const {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(t.batch) * kNumElements);
  for (int b = 0; b < t.batch; ++b) {
    for (int e = 0; e < kNumElements; ++e) mask[b * kNumElements + e] = states[b]->bag.counts()[e] > 0 ? 1 : 0;
  }
  return nn::log_softmax_rows(mlp("element", nn::concat_cols({focal, t.bag})), mask);
}

std::array<Tensor, 3> Policy::spatial_means(const Tensor& focal, std::span<const int> elements) const {
  const Tensor emb = nn::gather_rows(params_.get("spatial.embed"), elements);
  const Tensor raw = mlp("spatial", nn::concat_cols({focal, emb}));
  const Tensor mu_d = nn::add_scalar(nn::scale(nn::sigmoid(column_of(raw, 0)), cfg_.d_max - cfg_.d_min), cfg_.d_min);
  const Tensor mu_alpha = nn::scale(nn::sigmoid(column_of(raw, 1)), kPi);
  const Tensor mu_psi = nn::scale(nn::tanh(column_of(raw, 2)), kPi);
  return {mu_d, mu_alpha, mu_psi};
}

std::array<Tensor, 3> Policy::log_sigma_columns(int batch) const {
  const Tensor rows = nn::repeat_rows(params_.get("log_sigma"), batch);
  return {column_of(rows, 0), column_of(rows, 1), column_of(rows, 2)};
}

Tensor Policy::critic(const Trunk& t) const { return mlp("critic", nn::concat_cols({t.pooled, t.bag})); }

// ---------------------------------------------------------------------------

PolicyOutput Policy::output(const State& state, int focus, int element) const {
  nn::NoGradGuard no_grad;
  const State* ptr = &state;
  const std::span<const State* const> one(&ptr, 1);
  const Trunk t = run_trunk(one);
  PolicyOutput out;
  if (t.n_atoms > 0) {
    const Tensor lp = focus_log_softmax(t);
    out.focus_log_probs.assign(lp.data().begin(), lp.data().end());
    if (focus < 0) focus = argmax(out.focus_log_probs);
  } else {
    focus = 0;
  }
  const int fv[1] = {focus};
  const Tensor focal = focal_features(t, fv);
  const Tensor elp = element_log_softmax(t, focal, one);
  std::copy(elp.data().begin(), elp.data().end(), out.element_log_probs.begin());
  if (element < 0) element = argmax(out.element_log_probs);
  const int ev[1] = {element};
  const auto mu = spatial_means(focal, ev);
  out.mu_d = mu[0].item();
  out.mu_alpha = mu[1].item();
  out.mu_psi = mu[2].item();
  const auto ls = params_.get("log_sigma").data();
  out.log_sigma_d = ls[0];
  out.log_sigma_alpha = ls[1];
  out.log_sigma_psi = ls[2];
  out.value = critic(t).item();
  return out;
}

PolicySample Policy::sample(const State& state, Rng& rng, bool greedy) const {
  nn::NoGradGuard no_grad;
  if (state.bag.empty()) throw std::invalid_argument("sample: bag is empty");
  const State* ptr = &state;
  const std::span<const State* const> one(&ptr, 1);
  const Trunk t = run_trunk(one);
  PolicySample s;
  int focus = 0;
  if (t.n_atoms > 0) {
    const Tensor lp = focus_log_softmax(t);
    focus = greedy ? argmax(lp.data()) : rng.categorical_from_log(lp.data());
    s.log_probs.focus = lp.data()[focus];
  }
  const int fv[1] = {focus};
  const Tensor focal = focal_features(t, fv);
  const Tensor elp = element_log_softmax(t, focal, one);
  const int element = greedy ? argmax(elp.data()) : rng.categorical_from_log(elp.data());
  s.log_probs.element = elp.data()[element];
  s.action.focus = focus;
  s.action.element = kAllElements[element];
  if (t.n_atoms > 0) {
    const int ev[1] = {element};
    const auto mu = spatial_means(focal, ev);
    const auto ls = log_sigma_columns(1);
    std::array<double, 3> x{};
    for (int k = 0; k < 3; ++k) {
      x[k] = greedy ? mu[k].item() : mu[k].item() + std::exp(ls[k].item()) * rng.normal();
    }
    s.action.raw = {x[0], x[1], x[2]};
    double* slots[3] = {&s.log_probs.distance, &s.log_probs.alpha, &s.log_probs.psi};
    for (int k = 0; k < 3; ++k) *slots[k] = nn::gaussian_log_pdf(Tensor::scalar(x[k]), mu[k], ls[k]).item();
  }
  s.value = critic(t).item();
  return s;
}

double Policy::value(const State& state) const {
  nn::NoGradGuard no_grad;
  const State* ptr = &state;
  return critic(run_trunk(std::span<const State* const>(&ptr, 1))).item();
}

PolicyEvaluation Policy::evaluate(std::span<const State* const> states, std::span<const Action> actions) const {
  if (states.size() != actions.size()) throw std::invalid_argument("evaluate: states/actions size mismatch");
  const Trunk t = run_trunk(states);
  const int B = t.batch;

  std::vector<int> focus(B), elements(B), taken, dest;
  std::vector<double> spatial_mask(B), d(B), alpha(B), psi(B);
  for (int b = 0; b < B; ++b) {
    const Action& a = actions[b];
    elements[b] = index_of(a.element);
    if (states[b]->bag.count(a.element) <= 0) throw std::invalid_argument("evaluate: element not in bag");
    if (t.count[b] > 0) {
      if (a.focus < 0 || a.focus >= t.count[b]) throw std::out_of_range("evaluate: focus index out of range");
      focus[b] = a.focus;
      taken.push_back(t.offset[b] + a.focus);
      dest.push_back(b);
      spatial_mask[b] = 1.0;
      d[b] = a.raw.distance;
      alpha[b] = a.raw.alpha;
      psi[b] = a.raw.psi;
    }
  }

  const Tensor focus_all = focus_log_softmax(t);
  const Tensor focus_lp = nn::scatter_add_rows(nn::gather_rows(focus_all, taken), dest, B);
  const Tensor focus_entropy = nn::scatter_add_rows(nn::neg_plogp(focus_all), t.segment, B);

  const Tensor focal = focal_features(t, focus);
  const Tensor elp = element_log_softmax(t, focal, states);
  const Tensor element_lp = nn::select_cols(elp, elements);
  const Tensor element_entropy = nn::matmul(nn::neg_plogp(elp), Tensor::constant(kNumElements, 1, std::vector<double>(kNumElements, 1.0)));

  const auto mu = spatial_means(focal, elements);
  const auto ls = log_sigma_columns(B);
  const Tensor gd = nn::gaussian_log_pdf(Tensor::column(std::move(d)), mu[0], ls[0]);
  const Tensor ga = nn::gaussian_log_pdf(Tensor::column(std::move(alpha)), mu[1], ls[1]);
  const Tensor gp = nn::gaussian_log_pdf(Tensor::column(std::move(psi)), mu[2], ls[2]);
  const Tensor spatial = nn::mul_col(nn::add(nn::add(gd, ga), gp), Tensor::column(std::move(spatial_mask)));

  PolicyEvaluation ev;
  ev.log_prob = nn::add(nn::add(focus_lp, element_lp), spatial);
  ev.entropy = nn::add(focus_entropy, element_entropy);
  ev.value = critic(t);
  return ev;
}

std::vector<std::vector<double>> Policy::atom_features(const Canvas& canvas) const {
  nn::NoGradGuard no_grad;
  State s;
  s.canvas = canvas;
  const State* ptr = &s;
  const Trunk t = run_trunk(std::span<const State* const>(&ptr, 1));
  std::vector<std::vector<double>> out(t.n_atoms);
  for (int i = 0; i < t.n_atoms; ++i) {
    for (int k = 0; k < cfg_.width; ++k) out[i].push_back(t.h.at(i, k));
  }
  return out;
}

std::array<double, 3> Policy::sigmas() const {
  const auto ls = params_.get("log_sigma").data();
  return {std::exp(ls[0]), std::exp(ls[1]), std::exp(ls[2])};
}

}  // namespace molrl
