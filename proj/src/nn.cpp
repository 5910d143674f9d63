#include "marl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "marl/common.hpp"

namespace marl::nn {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

size_t sz(int a) { return static_cast<size_t>(a); }
size_t sz(int a, int b) { return static_cast<size_t>(a) * static_cast<size_t>(b); }

}  // namespace

Tensors zeros_like(const NetSpec& spec) {
  Tensors t;
  t.w1.assign(sz(spec.hidden_dim, spec.obs_dim), 0.0f);
  t.b1.assign(sz(spec.hidden_dim), 0.0f);
  t.w_pi.assign(sz(spec.num_actions, spec.hidden_dim), 0.0f);
  t.b_pi.assign(sz(spec.num_actions), 0.0f);
  t.w_v.assign(sz(spec.hidden_dim), 0.0f);
  t.b_v.assign(1, 0.0f);
  return t;
}

Params init_params(const NetSpec& spec, uint64_t seed) {
  Params p;
  static_cast<Tensors&>(p) = zeros_like(spec);
  p.spec = spec;
  p.version = 0;
  std::mt19937 rng(static_cast<uint32_t>(seed));
  auto fill_glorot = [&](std::vector<float>& w, int fan_in, int fan_out) {
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    for (float& x : w) x = (2.0f * uniform01(rng) - 1.0f) * limit;
  };
  fill_glorot(p.w1, spec.obs_dim, spec.hidden_dim);
  fill_glorot(p.w_pi, spec.hidden_dim, spec.num_actions);
  fill_glorot(p.w_v, spec.hidden_dim, 1);
  return p;
}

OptState init_opt_state(const NetSpec& spec) {
  OptState s;
  s.m = zeros_like(spec);
  s.v = zeros_like(spec);
  s.t = 0;
  return s;
}

namespace {

// Hidden activations are needed again for backprop, so the core forward
// exposes them.
void forward_hidden(const Params& p, const std::vector<float>& obs,
                    std::vector<double>& hidden) {
  const int H = p.spec.hidden_dim;
  const int D = p.spec.obs_dim;
  check(static_cast<int>(obs.size()) == D, "observation length " +
        std::to_string(obs.size()) + " != obs_dim " + std::to_string(D));
  hidden.assign(sz(H), 0.0);
  for (int j = 0; j < H; ++j) {
    double acc = p.b1[sz(j)];
    const float* row = p.w1.data() + sz(j, D);
    for (int i = 0; i < D; ++i) acc += static_cast<double>(row[i]) * obs[sz(i)];
    hidden[sz(j)] = std::tanh(acc);
  }
}

void heads_from_hidden(const Params& p, const std::vector<double>& hidden,
                       std::vector<float>& logits, float& value) {
  const int H = p.spec.hidden_dim;
  const int A = p.spec.num_actions;
  logits.assign(sz(A), 0.0f);
  for (int a = 0; a < A; ++a) {
    double acc = p.b_pi[sz(a)];
    const float* row = p.w_pi.data() + sz(a, H);
    for (int j = 0; j < H; ++j) acc += static_cast<double>(row[j]) * hidden[sz(j)];
    logits[sz(a)] = static_cast<float>(acc);
  }
  double acc = p.b_v[0];
  for (int j = 0; j < H; ++j) acc += static_cast<double>(p.w_v[sz(j)]) * hidden[sz(j)];
  value = static_cast<float>(acc);
}

}  // namespace

ForwardOut forward(const Params& params, const std::vector<float>& obs) {
  std::vector<double> hidden;
  forward_hidden(params, obs, hidden);
  ForwardOut out;
  heads_from_hidden(params, hidden, out.logits, out.value);
  return out;
}

std::vector<double> softmax(const std::vector<float>& logits) {
  double mx = -1e300;
  for (float z : logits) mx = std::max(mx, static_cast<double>(z));
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

std::vector<double> log_softmax(const std::vector<float>& logits) {
  double mx = -1e300;
  for (float z : logits) mx = std::max(mx, static_cast<double>(z));
  double sum = 0.0;
  for (float z : logits) sum += std::exp(static_cast<double>(z) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

double entropy(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

ActionSample sample_action(const std::vector<float>& logits, std::mt19937& rng) {
  const std::vector<double> probs = softmax(logits);
  const float u = uniform01(rng);
  double cum = 0.0;
  int action = static_cast<int>(logits.size()) - 1;
  for (size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (static_cast<double>(u) < cum) {
      action = static_cast<int>(i);
      break;
    }
  }
  ActionSample s;
  s.action = action;
  s.log_prob = static_cast<float>(log_softmax(logits)[static_cast<size_t>(action)]);
  return s;
}

GradOut grad(const Params& params,
             const std::vector<std::vector<float>>& observations,
             const StepLossFn& step_fn) {
  check(!observations.empty(), "grad() needs a nonempty batch");
  const int D = params.spec.obs_dim;
  const int H = params.spec.hidden_dim;
  const int A = params.spec.num_actions;
  const size_t T = observations.size();

  // Double accumulators; rounded to f32 once after the mean reduction.
  std::vector<double> g_w1(sz(H, D), 0.0), g_b1(sz(H), 0.0);
  std::vector<double> g_wpi(sz(A, H), 0.0), g_bpi(sz(A), 0.0);
  std::vector<double> g_wv(sz(H), 0.0);
  double g_bv = 0.0;
  double loss_sum = 0.0;

  std::vector<double> hidden;
  std::vector<float> logits;
  std::vector<double> dh(sz(H));
  for (size_t t = 0; t < T; ++t) {
    forward_hidden(params, observations[t], hidden);
    float value = 0.0f;
    heads_from_hidden(params, hidden, logits, value);

    StepGrad sg = step_fn(t, logits, value);
    check(sg.dlogits.size() == sz(A), "step gradient has wrong logits arity");
    loss_sum += sg.loss;

    // Heads.
    for (int a = 0; a < A; ++a) {
      const double dl = sg.dlogits[sz(a)];
      g_bpi[sz(a)] += dl;
      for (int j = 0; j < H; ++j) g_wpi[sz(a, H) + sz(j)] += dl * hidden[sz(j)];
    }
    g_bv += sg.dvalue;
    for (int j = 0; j < H; ++j) g_wv[sz(j)] += sg.dvalue * hidden[sz(j)];

    // Torso: dh pulls from both heads, then through tanh'.
    for (int j = 0; j < H; ++j) {
      double acc = sg.dvalue * static_cast<double>(params.w_v[sz(j)]);
      for (int a = 0; a < A; ++a)
        acc += sg.dlogits[sz(a)] * static_cast<double>(params.w_pi[sz(a, H) + sz(j)]);
      dh[sz(j)] = acc * (1.0 - hidden[sz(j)] * hidden[sz(j)]);
    }
    for (int j = 0; j < H; ++j) {
      g_b1[sz(j)] += dh[sz(j)];
      const double dpre = dh[sz(j)];
      const std::vector<float>& x = observations[t];
      for (int i = 0; i < D; ++i)
        g_w1[sz(j, D) + sz(i)] += dpre * static_cast<double>(x[sz(i)]);
    }
  }

  const double inv_t = 1.0 / static_cast<double>(T);
  GradOut out;
  out.loss = loss_sum * inv_t;
  if (!std::isfinite(out.loss))
    throw NonFiniteLoss("loss is not finite: " + fmt_float(out.loss));
  out.grads = zeros_like(params.spec);
  auto scale_into = [inv_t](const std::vector<double>& src, std::vector<float>& dst) {
    for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i] * inv_t);
  };
  scale_into(g_w1, out.grads.w1);
  scale_into(g_b1, out.grads.b1);
  scale_into(g_wpi, out.grads.w_pi);
  scale_into(g_bpi, out.grads.b_pi);
  scale_into(g_wv, out.grads.w_v);
  out.grads.b_v[0] = static_cast<float>(g_bv * inv_t);
  return out;
}

void adam_step(Params& params, OptState& opt, const Tensors& grads, float lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(opt.t));

  auto pf = params.fields();
  auto gf = grads.fields();
  auto mf = opt.m.fields();
  auto vf = opt.v.fields();
  for (size_t f = 0; f < pf.size(); ++f) {
    std::vector<float>& w = *pf[f];
    const std::vector<float>& g = *gf[f];
    std::vector<float>& m = *mf[f];
    std::vector<float>& v = *vf[f];
    check(w.size() == g.size() && w.size() == m.size() && w.size() == v.size(),
          "optimizer state out of shape");
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
      const double vi = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      w[i] = static_cast<float>(w[i] - static_cast<double>(lr) * m_hat /
                                           (std::sqrt(v_hat) + kEps));
    }
  }
  params.version += 1;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'A', 'J', 'X'};
constexpr uint16_t kFormatVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));  // little-endian host assumed (x86/arm64)
  out.append(buf, sizeof(T));
}

void put_floats(std::string& out, const std::vector<float>& v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
}

struct Reader {
  const std::string& data;
  size_t pos = 0;
  std::string where;

  void need(size_t n) {
    if (pos + n > data.size())
      throw CheckpointLoadError("truncated checkpoint while reading " + where);
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void get_floats(std::vector<float>& v, size_t n) {
    need(n * sizeof(float));
    v.resize(n);
    std::memcpy(v.data(), data.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Params>& population) {
  std::string out;
  out.append(kMagic, 4);
  put<uint16_t>(out, kFormatVersion);
  put<uint16_t>(out, static_cast<uint16_t>(population.size()));
  for (const Params& p : population) {
    put<uint32_t>(out, static_cast<uint32_t>(p.spec.obs_dim));
    put<uint32_t>(out, static_cast<uint32_t>(p.spec.hidden_dim));
    put<uint32_t>(out, static_cast<uint32_t>(p.spec.num_actions));
    put<uint64_t>(out, p.version);
    for (const std::vector<float>* f : p.fields()) put_floats(out, *f);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

std::vector<Params> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointLoadError("cannot open checkpoint: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{data, 0, "header"};
  r.need(4);
  if (std::memcmp(data.data(), kMagic, 4) != 0)
    throw CheckpointLoadError("bad checkpoint magic in " + path);
  r.pos = 4;
  const auto version = r.get<uint16_t>();
  if (version != kFormatVersion)
    throw CheckpointLoadError("unsupported checkpoint format version " +
                              std::to_string(version));
  const auto count = r.get<uint16_t>();
  std::vector<Params> population;
  population.reserve(count);
  for (uint16_t i = 0; i < count; ++i) {
    r.where = "agent " + std::to_string(i);
    NetSpec spec;
    spec.obs_dim = static_cast<int>(r.get<uint32_t>());
    spec.hidden_dim = static_cast<int>(r.get<uint32_t>());
    spec.num_actions = static_cast<int>(r.get<uint32_t>());
    if (spec.obs_dim < 1 || spec.hidden_dim < 1 || spec.num_actions < 1)
      throw CheckpointLoadError("invalid network shape in " + r.where);
    Params p;
    static_cast<Tensors&>(p) = zeros_like(spec);
    p.spec = spec;
    p.version = r.get<uint64_t>();
    for (std::vector<float>* field : p.fields()) r.get_floats(*field, field->size());
    population.push_back(std::move(p));
  }
  if (r.pos != data.size())
    throw CheckpointLoadError("trailing bytes in checkpoint " + path);
  return population;
}

}  // namespace marl::nn
