#include "molrl/ppo.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace molrl {

void TrainConfig::validate() const {
  if (!(gamma >= 0 && gamma <= 1)) throw std::invalid_argument("train.gamma must be in [0, 1]");
  if (!(lam >= 0 && lam <= 1)) throw std::invalid_argument("train.lam must be in [0, 1]");
  if (!(clip_ratio > 0)) throw std::invalid_argument("train.clip_ratio must be positive");
  if (!(vf_coef >= 0)) throw std::invalid_argument("train.vf_coef must be >= 0");
  if (!(lr > 0)) throw std::invalid_argument("train.lr must be positive");
  if (minibatch <= 0 || steps_per_iter <= 0 || workers <= 0 || epochs <= 0) {
    throw std::invalid_argument("train.minibatch, steps_per_iter, workers and epochs must be positive");
  }
  if (workers > steps_per_iter) throw std::invalid_argument("train.workers exceeds steps_per_iter");
  entropy.validate();
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"gamma", c.gamma},
           {"lam", c.lam},
           {"clip_ratio", c.clip_ratio},
           {"vf_coef", c.vf_coef},
           {"lr", c.lr},
           {"grad_clip", c.grad_clip},
           {"minibatch", c.minibatch},
           {"steps_per_iter", c.steps_per_iter},
           {"workers", c.workers},
           {"epochs", c.epochs},
           {"entropy_schedule",
            {c.entropy.start_iter, c.entropy.end_iter, c.entropy.start_value, c.entropy.end_value}},
           {"normalize_advantages", c.normalize_advantages}};
}

void from_json(const Json& j, TrainConfig& c) {
  TrainConfig d;
  c.gamma = j.value("gamma", d.gamma);
  c.lam = j.value("lam", d.lam);
  c.clip_ratio = j.value("clip_ratio", d.clip_ratio);
  c.vf_coef = j.value("vf_coef", d.vf_coef);
  c.lr = j.value("lr", d.lr);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.minibatch = j.value("minibatch", d.minibatch);
  c.steps_per_iter = j.value("steps_per_iter", d.steps_per_iter);
  c.workers = j.value("workers", d.workers);
  c.epochs = j.value("epochs", d.epochs);
  c.normalize_advantages = j.value("normalize_advantages", d.normalize_advantages);
  c.entropy = d.entropy;
  if (j.contains("entropy_schedule")) {
    const Json& s = j.at("entropy_schedule");
    if (!s.is_array() || s.size() != 4) throw std::invalid_argument("train.entropy_schedule must be [start, end, v0, v1]");
    c.entropy = {s[0].get<long>(), s[1].get<long>(), s[2].get<double>(), s[3].get<double>()};
  }
}

// ---------------------------------------------------------------------------

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double gamma, double lam) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n) {
    throw std::invalid_argument("compute_gae: need n rewards, n dones and n + 1 values");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * values[k + 1] * live - values[k];
    next = delta + gamma * lam * live * next;
    out.advantages[k] = next;
    out.returns[k] = next + values[k];
  }
  return out;
}

std::vector<double> normalize(std::span<const double> x) {
  if (x.empty()) return {};
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(x.size())), 1e-8);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / sd;
  return out;
}

LossTerms ppo_losses(const Policy& policy, std::span<const Transition* const> batch, std::span<const double> advantages,
                     std::span<const double> returns, double entropy_coef, const TrainConfig& cfg) {
  const std::size_t n = batch.size();
  if (n == 0 || advantages.size() != n || returns.size() != n) throw std::invalid_argument("ppo_losses: bad batch");
  std::vector<const State*> states(n);
  std::vector<Action> actions(n);
  std::vector<double> old_lp(n);
  for (std::size_t i = 0; i < n; ++i) {
    states[i] = &batch[i]->state;
    actions[i] = batch[i]->action;
    old_lp[i] = batch[i]->log_prob;
  }
  const PolicyEvaluation ev = policy.evaluate(states, actions);
  const nn::Tensor adv = nn::Tensor::column({advantages.begin(), advantages.end()});
  const nn::Tensor ret = nn::Tensor::column({returns.begin(), returns.end()});
  const nn::Tensor ratio = nn::exp(nn::sub(ev.log_prob, nn::Tensor::column(old_lp)));
  const nn::Tensor surr = nn::mul(ratio, adv);
  const nn::Tensor clipped = nn::mul(nn::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio), adv);
  const nn::Tensor l_clip = nn::mean(nn::minimum(surr, clipped));
  const nn::Tensor l_value = nn::mean(nn::square(nn::sub(ev.value, ret)));
  const nn::Tensor l_entropy = nn::mean(ev.entropy);

  LossTerms t;
  t.total = nn::sub(nn::add(nn::scale(l_clip, -1.0), nn::scale(l_value, cfg.vf_coef)), nn::scale(l_entropy, entropy_coef));
  t.clip = l_clip.item();
  t.value = l_value.item();
  t.entropy = l_entropy.item();
  const auto lp = ev.log_prob.data();
  const auto r = ratio.data();
  for (std::size_t i = 0; i < n; ++i) {
    t.approx_kl += old_lp[i] - lp[i];
    if (std::abs(r[i] - 1.0) > cfg.clip_ratio) t.clip_fraction += 1.0;
  }
  t.approx_kl /= static_cast<double>(n);
  t.clip_fraction /= static_cast<double>(n);
  if (!std::isfinite(t.total.item())) {
    std::ostringstream msg;
    msg << "non-finite PPO loss: clip=" << t.clip << " value=" << t.value << " entropy=" << t.entropy
        << " kl=" << t.approx_kl;
    throw LossError(msg.str());
  }
  return t;
}

Json IterationMetrics::to_json() const {
  return Json{{"iter", iter},
              {"env_steps", env_steps},
              {"episodes", episodes},
              {"mean_episode_return", mean_episode_return},
              {"mean_terminal_reward", mean_terminal_reward},
              {"validity_rate", validity_rate},
              {"kill_rate", kill_rate},
              {"mean_delta_e", mean_delta_e ? Json(*mean_delta_e) : Json(nullptr)},
              {"loss_clip", loss_clip},
              {"loss_value", loss_value},
              {"entropy", entropy},
              {"loss_total", loss_total},
              {"approx_kl", approx_kl},
              {"clip_fraction", clip_fraction},
              {"grad_norm", grad_norm},
              {"entropy_coef", entropy_coef},
              {"sigma_d", sigma[0]},
              {"sigma_alpha", sigma[1]},
              {"sigma_psi", sigma[2]},
              {"unique_isomers", unique_isomers}};
}

std::vector<long> checkpoint_schedule(long total, int count) {
  std::vector<long> out;
  if (total <= 0 || count <= 0) return out;
  for (int k = 1; k <= count; ++k) {
    const long it = (total * k) / count;
    if (it > 0 && (out.empty() || out.back() != it)) out.push_back(it);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct EpisodeEnd {
  int bag_id = 0;
  double episode_return = 0.0;
  double terminal_reward = 0.0;
  bool killed = false;
  bool valid = false;
  std::optional<double> delta_e;
  Canvas canvas;
};

struct Trainer::Worker {
  int id = 0;
  Rng rng;
  std::unique_ptr<Calculator> calc;
  std::unique_ptr<MoleculeEnv> env;
  std::vector<int> order;
  std::size_t cursor = 0;
  bool active = false;
  State state;
  int bag_id = 0;
  double episode_return = 0.0;
  std::vector<EpisodeEnd> finished;

  int next_bag(std::size_t n_bags) {
    if (cursor >= order.size()) {
      order.resize(n_bags);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  }
};

Trainer::Trainer(TrainConfig train, RewardConfig reward, NetConfig net, std::vector<Bag> bags,
                 CalculatorFactory calculators, std::uint64_t seed, BondPerceptionConfig bonds)
    : train_(std::move(train)),
      reward_(std::move(reward)),
      bags_(std::move(bags)),
      seed_(seed),
      bonds_(std::move(bonds)),
      policy_(net, seed),
      adam_(nn::AdamConfig{train_.lr, 0.9, 0.999, 1e-8, train_.grad_clip}),
      rng_(mix_seed(seed, 0x7472616eULL)) {
  train_.validate();
  reward_.validate();
  if (bags_.empty()) throw std::invalid_argument("trainer needs at least one bag");
  for (const Bag& b : bags_) {
    if (b.empty()) throw std::invalid_argument("trainer bag set contains an empty bag");
  }
  for (int i = 0; i < train_.workers; ++i) {
    auto w = std::make_unique<Worker>();
    w->id = i;
    w->rng = Rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(i)));
    w->calc = calculators();
    w->env = std::make_unique<MoleculeEnv>(reward_, *w->calc, bonds_);
    workers_.push_back(std::move(w));
  }
}

Trainer::~Trainer() = default;

void Trainer::set_reward_config(const RewardConfig& reward) {
  reward.validate();
  reward_ = reward;
  for (auto& w : workers_) w->env->set_config(reward_);
}

std::vector<Transition> Trainer::collect(Worker& w, int steps, std::vector<double>& bootstrap_out) {
  std::vector<Transition> out;
  out.reserve(steps);
  for (int s = 0; s < steps; ++s) {
    if (!w.active) {
      w.bag_id = w.next_bag(bags_.size());
      w.state = w.env->reset(bags_[w.bag_id]);
      w.episode_return = 0.0;
      w.active = true;
    }
    const PolicySample ps = policy_.sample(w.state, w.rng);
    StepOutcome o = w.env->step(w.state, ps.action, iter_);
    Transition t;
    t.state = w.state;
    t.action = ps.action;
    t.reward = o.reward;
    t.value = ps.value;
    t.log_prob = ps.log_probs.total();
    t.done = o.done;
    t.bag_id = w.bag_id;
    t.worker_id = w.id;
    t.iter = iter_;
    out.push_back(std::move(t));
    w.episode_return += o.reward;
    if (o.done) {
      EpisodeEnd e;
      e.bag_id = w.bag_id;
      e.episode_return = w.episode_return;
      e.terminal_reward = o.reward;
      e.killed = o.kill;
      if (o.terminal) {
        e.valid = o.terminal->valid;
        e.delta_e = o.terminal->delta_e;
      }
      e.canvas = o.next.canvas;
      w.finished.push_back(std::move(e));
      w.active = false;
    } else {
      w.state = std::move(o.next);
    }
  }
  bootstrap_out.assign(1, w.active ? policy_.value(w.state) : 0.0);
  return out;
}

IterationMetrics Trainer::train_iteration() {
  const int n_workers = train_.workers;
  std::vector<std::vector<Transition>> segments(n_workers);
  std::vector<std::vector<double>> bootstrap(n_workers);
  std::vector<std::exception_ptr> errors(n_workers);
  for (auto& w : workers_) w->finished.clear();

  auto quota = [&](int i) {
    return train_.steps_per_iter / n_workers + (i < train_.steps_per_iter % n_workers ? 1 : 0);
  };
  auto run = [&](int i) {
    try {
      segments[i] = collect(*workers_[i], quota(i), bootstrap[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (n_workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n_workers; ++i) threads.emplace_back(run, i);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Merge in worker order.
  std::vector<Transition> buffer;
  std::vector<double> advantages, returns;
  for (int i = 0; i < n_workers; ++i) {
    const auto& seg = segments[i];
    std::vector<double> r, v;
    std::vector<std::uint8_t> d;
    for (const auto& t : seg) {
      r.push_back(t.reward);
      v.push_back(t.value);
      d.push_back(t.done ? 1 : 0);
    }
    v.push_back(bootstrap[i].at(0));
    const GaeResult g = compute_gae(r, v, d, train_.gamma, train_.lam);
    advantages.insert(advantages.end(), g.advantages.begin(), g.advantages.end());
    returns.insert(returns.end(), g.returns.begin(), g.returns.end());
    buffer.insert(buffer.end(), seg.begin(), seg.end());
  }

  IterationMetrics m;
  m.iter = iter_;
  m.env_steps = env_steps_ + static_cast<long>(buffer.size());
  long valid = 0, killed = 0, with_energy = 0;
  double ret_sum = 0.0, term_sum = 0.0, de_sum = 0.0;
  for (const auto& w : workers_) {
    for (const auto& e : w->finished) {
      ++m.episodes;
      ret_sum += e.episode_return;
      term_sum += e.terminal_reward;
      if (e.valid) ++valid;
      if (e.killed) ++killed;
      if (e.delta_e) {
        de_sum += *e.delta_e;
        ++with_energy;
      }
      std::optional<CanonicalKey> key;
      if (e.valid) key = canonical_key(perceive_bonds(e.canvas, bonds_));
      discovery_.record_known(bags_[e.bag_id].formula_key(), e.valid, key, e.canvas, e.delta_e.value_or(0.0), iter_);
    }
  }
  if (m.episodes > 0) {
    const double n = static_cast<double>(m.episodes);
    m.mean_episode_return = ret_sum / n;
    m.mean_terminal_reward = term_sum / n;
    m.validity_rate = static_cast<double>(valid) / n;
    m.kill_rate = static_cast<double>(killed) / n;
  }
  if (with_energy > 0) m.mean_delta_e = de_sum / static_cast<double>(with_energy);

  if (train_.normalize_advantages) advantages = normalize(advantages);
  const double entropy_coef = train_.entropy.value(iter_);
  m.entropy_coef = entropy_coef;

  const std::size_t n = buffer.size();
  std::vector<std::size_t> perm(n);
  long updates = 0;
  for (int epoch = 0; epoch < train_.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), 0);
    rng_.shuffle(perm);
    for (std::size_t start = 0; start < n; start += train_.minibatch) {
      const std::size_t end = std::min(n, start + train_.minibatch);
      std::vector<const Transition*> mb;
      std::vector<double> adv, ret;
      for (std::size_t k = start; k < end; ++k) {
        mb.push_back(&buffer[perm[k]]);
        adv.push_back(advantages[perm[k]]);
        ret.push_back(returns[perm[k]]);
      }
      policy_.params().zero_grad();
      const LossTerms lt = ppo_losses(policy_, mb, adv, ret, entropy_coef, train_);
      nn::backward(lt.total);
      m.grad_norm += adam_.step(policy_.params());
      m.loss_clip += lt.clip;
      m.loss_value += lt.value;
      m.entropy += lt.entropy;
      m.loss_total += lt.total.item();
      m.approx_kl += lt.approx_kl;
      m.clip_fraction += lt.clip_fraction;
      ++updates;
    }
  }
  if (updates > 0) {
    const double u = static_cast<double>(updates);
    m.grad_norm /= u;
    m.loss_clip /= u;
    m.loss_value /= u;
    m.entropy /= u;
    m.loss_total /= u;
    m.approx_kl /= u;
    m.clip_fraction /= u;
  }
  m.sigma = policy_.sigmas();
  m.unique_isomers = discovery_.total_unique();
  env_steps_ = m.env_steps;
  ++iter_;
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'O', 'L', 'R', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<double> f64s() {
    const std::uint64_t n = u64();
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

void write_state(ByteWriter& w, const State& s) {
  w.u32(static_cast<std::uint32_t>(s.canvas.size()));
  for (const auto& a : s.canvas.atoms()) {
    w.u8(static_cast<std::uint8_t>(a.element));
    w.f64(a.position.x);
    w.f64(a.position.y);
    w.f64(a.position.z);
  }
  for (int c : s.bag.counts()) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(s.step));
  w.u32(static_cast<std::uint32_t>(s.horizon));
}

State read_state(ByteReader& r) {
  State s;
  const std::uint32_t n = r.u32();
  std::vector<Atom> atoms;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint8_t e = r.u8();
    if (e >= kNumElements) throw CheckpointError("checkpoint holds an unknown element");
    Atom a{static_cast<Element>(e), {}};
    a.position.x = r.f64();
    a.position.y = r.f64();
    a.position.z = r.f64();
    atoms.push_back(a);
  }
  s.canvas = Canvas(std::move(atoms));
  std::array<int, kNumElements> counts{};
  for (int& c : counts) c = static_cast<int>(r.u32());
  s.bag = Bag(counts);
  s.step = static_cast<int>(r.u32());
  s.horizon = static_cast<int>(r.u32());
  return s;
}

struct Header {
  std::uint64_t config_hash;
  std::uint64_t net_hash;
  std::string payload;
};

Header read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 8 + 4 + 8 + 8 + 8 + 8 || std::memcmp(data.data(), kMagic, 8) != 0) {
    throw CheckpointError(path + " is not a molrl checkpoint");
  }
  ByteReader r(std::string_view(data).substr(8));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Header h;
  h.config_hash = r.u64();
  h.net_hash = r.u64();
  h.payload = r.str();
  const std::uint64_t checksum = r.u64();
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  if (fnv1a(h.payload) != checksum) throw CheckpointError("checkpoint checksum mismatch (file corrupt)");
  return h;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path, std::uint64_t config_hash) const {
  ByteWriter p;
  p.i64(iter_);
  p.i64(env_steps_);
  const auto& items = policy_.params().items();
  p.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    p.str(name);
    p.u32(static_cast<std::uint32_t>(t.rows()));
    p.u32(static_cast<std::uint32_t>(t.cols()));
    p.f64s(t.data());
  }
  const nn::AdamState& st = adam_.state();
  p.i64(st.step);
  p.u32(static_cast<std::uint32_t>(st.m.size()));
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    p.f64s(st.m[i]);
    p.f64s(st.v[i]);
  }
  p.str(rng_.serialize());
  p.u32(static_cast<std::uint32_t>(workers_.size()));
  for (const auto& w : workers_) {
    p.str(w->rng.serialize());
    p.u32(static_cast<std::uint32_t>(w->order.size()));
    for (int b : w->order) p.u32(static_cast<std::uint32_t>(b));
    p.u64(w->cursor);
    p.u8(w->active ? 1 : 0);
    write_state(p, w->state);
    p.u32(static_cast<std::uint32_t>(w->bag_id));
    p.f64(w->episode_return);
  }
  p.str(discovery_.to_json().dump());

  ByteWriter out;
  out.u32(kCheckpointVersion);
  out.u64(config_hash);
  out.u64(policy_.config().hash());
  out.str(p.bytes());
  out.u64(fnv1a(p.bytes()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + path);
    f.write(kMagic, 8);
    f.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
    if (!f) throw CheckpointError("short write on checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

namespace {

void read_params_and_optimizer(ByteReader& r, nn::ParamStore& params, nn::Adam& adam) {
  auto& items = params.items();
  const std::uint32_t n = r.u32();
  if (n != items.size()) throw CheckpointError("checkpoint parameter count does not match the network");
  std::vector<std::vector<double>> values(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (name != items[i].first || static_cast<int>(rows) != items[i].second.rows() ||
        static_cast<int>(cols) != items[i].second.cols()) {
      throw CheckpointError("checkpoint parameter '" + name + "' does not match the network");
    }
    values[i] = r.f64s();
    if (values[i].size() != items[i].second.size()) throw CheckpointError("checkpoint parameter size mismatch");
  }
  nn::AdamState st;
  st.step = r.i64();
  const std::uint32_t k = r.u32();
  if (k != 0 && k != n) throw CheckpointError("checkpoint optimizer state does not match the network");
  for (std::uint32_t i = 0; i < k; ++i) {
    st.m.push_back(r.f64s());
    st.v.push_back(r.f64s());
    if (st.m.back().size() != values[i].size() || st.v.back().size() != values[i].size()) {
      throw CheckpointError("checkpoint optimizer moment size mismatch");
    }
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    std::copy(values[i].begin(), values[i].end(), items[i].second.mutable_data().begin());
  }
  adam.state() = std::move(st);
}

}  // namespace

void Trainer::load_checkpoint(const std::string& path, std::uint64_t config_hash) {
  const Header h = read_container(path);
  if (h.config_hash != config_hash) {
    throw CheckpointError("checkpoint config hash mismatch: file has " + std::to_string(h.config_hash) +
                          ", run config has " + std::to_string(config_hash));
  }
  if (h.net_hash != policy_.config().hash()) throw CheckpointError("checkpoint network architecture mismatch");
  ByteReader r(h.payload);
  const long iter = r.i64();
  const long steps = r.i64();
  read_params_and_optimizer(r, policy_.params(), adam_);
  rng_.deserialize(r.str());
  const std::uint32_t nw = r.u32();
  if (nw != workers_.size()) throw CheckpointError("checkpoint worker count does not match the run config");
  for (auto& w : workers_) {
    w->rng.deserialize(r.str());
    const std::uint32_t no = r.u32();
    w->order.clear();
    for (std::uint32_t i = 0; i < no; ++i) {
      const std::uint32_t b = r.u32();
      if (b >= bags_.size()) throw CheckpointError("checkpoint bag index out of range");
      w->order.push_back(static_cast<int>(b));
    }
    w->cursor = r.u64();
    w->active = r.u8() != 0;
    w->state = read_state(r);
    w->bag_id = static_cast<int>(r.u32());
    w->episode_return = r.f64();
    w->finished.clear();
  }
  discovery_ = DiscoveryBuffer::from_json(Json::parse(r.str()));
  if (!r.done()) throw CheckpointError("unexpected bytes at the end of the checkpoint payload");
  iter_ = iter;
  env_steps_ = steps;
}

void Trainer::load_weights(const std::string& path) {
  const Header h = read_container(path);
  if (h.net_hash != policy_.config().hash()) throw CheckpointError("checkpoint network architecture mismatch");
  ByteReader r(h.payload);
  iter_ = r.i64();
  env_steps_ = r.i64();
  read_params_and_optimizer(r, policy_.params(), adam_);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  const Header h = read_container(path);
  ByteReader r(h.payload);
  CheckpointInfo info;
  info.config_hash = h.config_hash;
  info.net_hash = h.net_hash;
  info.iteration = r.i64();
  info.env_steps = r.i64();
  return info;
}

CheckpointInfo load_policy_weights(const std::string& path, Policy& policy) {
  const Header h = read_container(path);
  if (h.net_hash != policy.config().hash()) throw CheckpointError("checkpoint network architecture mismatch");
  ByteReader r(h.payload);
  CheckpointInfo info;
  info.config_hash = h.config_hash;
  info.net_hash = h.net_hash;
  info.iteration = r.i64();
  info.env_steps = r.i64();
  nn::Adam scratch;
  read_params_and_optimizer(r, policy.params(), scratch);
  return info;
}

}  // namespace molrl
