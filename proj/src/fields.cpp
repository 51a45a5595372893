#include "recon/fields.hpp"

#include <cmath>

namespace recon {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// ---- FrequencyEncoding ------------------------------------------------------

Tensor FrequencyEncoding::encode(const Tensor& x) const {
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out({n, out_dim(d)});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < d; ++j) out(i, c++) = x(i, j);
    for (int k = 0; k < octaves; ++k) {
      const double a = std::ldexp(kPi, k);
      for (std::size_t j = 0; j < d; ++j) out(i, c++) = std::sin(a * x(i, j));
      for (std::size_t j = 0; j < d; ++j) out(i, c++) = std::cos(a * x(i, j));
    }
  }
  out.quantize();
  return out;
}

Var FrequencyEncoding::encode(Tape& tape, Var x) const {
  std::vector<Var> parts{x};
  for (int k = 0; k < octaves; ++k) {
    const double a = std::ldexp(kPi, k);
    Var sx = scale(x, a);
    parts.push_back(vsin(sx));
    parts.push_back(vcos(sx));
  }
  return concat_cols(parts);
}

Var FrequencyEncoding::encode_tangent(Tape& tape, Var x, const Tensor& dir) const {
  Var d = tape.constant(dir, "enc_dir");
  std::vector<Var> parts{d};
  for (int k = 0; k < octaves; ++k) {
    const double a = std::ldexp(kPi, k);
    Var sx = scale(x, a);
    parts.push_back(mul(scale(vcos(sx), a), d));
    parts.push_back(mul(scale(vsin(sx), -a), d));
  }
  return concat_cols(parts);
}

// ---- Mlp --------------------------------------------------------------------

std::string Mlp::weight_name(int layer) const {
  return prefix_ + "/W" + std::to_string(layer);
}
std::string Mlp::bias_name(int layer) const {
  return prefix_ + "/b" + std::to_string(layer);
}

void Mlp::init_params(ParamStore& store, Rng& rng) const {
  std::size_t in = cfg_.in_dim;
  for (int l = 0; l <= cfg_.hidden_layers; ++l) {
    const std::size_t out = (l == cfg_.hidden_layers) ? cfg_.out_dim : cfg_.hidden;
    Tensor w({in, out});
    const double s = std::sqrt(2.0 / static_cast<double>(in));
    for (double& v : w.data) v = rng.normal(0.0, s);
    w.quantize();
    store.add(weight_name(l), std::move(w));
    store.add(bias_name(l), Tensor({out}, 0.0));
    in = out;
  }
}

Mlp::Trace Mlp::forward_trace(Tape& tape, const VarMap& vars, Var x) const {
  Trace t;
  Var h = x;
  for (int l = 0; l < cfg_.hidden_layers; ++l) {
    Var pre = add_rowvec(matmul(h, vars.at(weight_name(l))), vars.at(bias_name(l)));
    t.pre.push_back(pre);
    h = softplus(pre, cfg_.sharpness);
  }
  t.out = add_rowvec(matmul(h, vars.at(weight_name(cfg_.hidden_layers))),
                     vars.at(bias_name(cfg_.hidden_layers)));
  return t;
}

Var Mlp::forward(Tape& tape, const VarMap& vars, Var x) const {
  return forward_trace(tape, vars, x).out;
}

std::vector<Var> Mlp::activation_derivatives(Tape& tape, const Trace& trace) const {
  std::vector<Var> d;
  d.reserve(trace.pre.size());
  for (Var pre : trace.pre) d.push_back(sigmoid(scale(pre, cfg_.sharpness)));
  return d;
}

Var Mlp::tangent(Tape& tape, const VarMap& vars, const Trace& trace,
                 const std::vector<Var>& dact, Var x_tangent) const {
  Var t = x_tangent;
  for (int l = 0; l < cfg_.hidden_layers; ++l)
    t = mul(matmul(t, vars.at(weight_name(l))), dact[static_cast<std::size_t>(l)]);
  return matmul(t, vars.at(weight_name(cfg_.hidden_layers)));
}

// ---- HumanShapeField ----------------------------------------------------------

HumanShapeField::HumanShapeField(ShapeFieldConfig cfg, std::string prefix) : cfg_(cfg) {
  enc_.octaves = cfg.encoding_octaves;
  MlpConfig mc;
  mc.in_dim = enc_.out_dim(3) + cfg.pose_dim;
  mc.hidden = cfg.hidden;
  mc.hidden_layers = cfg.hidden_layers;
  mc.out_dim = 1 + cfg.d_z;
  mc.sharpness = cfg.sharpness;
  mlp_ = Mlp(mc, std::move(prefix));
}

HumanShapeField::Eval HumanShapeField::eval(Tape& tape, const VarMap& vars, Var x_c,
                                            Var theta_rows) const {
  Var in = concat_cols({enc_.encode(tape, x_c), theta_rows});
  Var out = mlp_.forward(tape, vars, in);
  return {slice_cols(out, 0, 1), slice_cols(out, 1, 1 + cfg_.d_z)};
}

HumanShapeField::EvalGrad HumanShapeField::eval_with_grad(Tape& tape, const VarMap& vars,
                                                          Var x_c, Var theta_rows) const {
  const std::size_t n = x_c.value().rows();
  Var in = concat_cols({enc_.encode(tape, x_c), theta_rows});
  Mlp::Trace trace = mlp_.forward_trace(tape, vars, in);
  auto dact = mlp_.activation_derivatives(tape, trace);

  Var theta_zero = tape.constant(Tensor({n, cfg_.pose_dim}, 0.0), "theta_tan0");
  std::vector<Var> grad_cols;
  for (int j = 0; j < 3; ++j) {
    Tensor dir({n, 3}, 0.0);
    for (std::size_t i = 0; i < n; ++i) dir(i, static_cast<std::size_t>(j)) = 1.0;
    Var tan_in = concat_cols({enc_.encode_tangent(tape, x_c, dir), theta_zero});
    Var tan_out = mlp_.tangent(tape, vars, trace, dact, tan_in);
    grad_cols.push_back(slice_cols(tan_out, 0, 1));
  }
  EvalGrad r;
  r.sdf = slice_cols(trace.out, 0, 1);
  r.z = slice_cols(trace.out, 1, 1 + cfg_.d_z);
  r.grad = concat_cols(grad_cols);
  return r;
}

Tensor eval_sdf_batch(const HumanShapeField& field, const ParamStore& store,
                      const Tensor& pts, const std::vector<double>& theta) {
  Tape tape;
  tape.check_finite = false;
  auto vars = store.attach(tape);
  Var x = tape.constant(pts, "probe_pts");
  Tensor trows({pts.rows(), theta.size()});
  for (std::size_t i = 0; i < pts.rows(); ++i)
    for (std::size_t j = 0; j < theta.size(); ++j) trows(i, j) = theta[j];
  Var th = tape.constant(std::move(trows), "probe_theta");
  return field.eval(tape, vars, x, th).sdf.value();
}

std::pair<Tensor, Tensor> eval_sdf_with_grad_batch(const HumanShapeField& field,
                                                   const ParamStore& store, const Tensor& pts,
                                                   const std::vector<double>& theta) {
  Tape tape;
  tape.check_finite = false;
  auto vars = store.attach(tape);
  Var x = tape.constant(pts, "probe_pts");
  Tensor trows({pts.rows(), theta.size()});
  for (std::size_t i = 0; i < pts.rows(); ++i)
    for (std::size_t j = 0; j < theta.size(); ++j) trows(i, j) = theta[j];
  Var th = tape.constant(std::move(trows), "probe_theta");
  auto ev = field.eval_with_grad(tape, vars, x, th);
  return {ev.sdf.value(), ev.grad.value()};
}

double eval_sdf_value(const HumanShapeField& field, const ParamStore& store, const Vec3& x,
                      const std::vector<double>& theta) {
  Tensor p({1, 3});
  p[0] = x.x;
  p[1] = x.y;
  p[2] = x.z;
  return eval_sdf_batch(field, store, p, theta)[0];
}

Vec3 eval_sdf_gradient_value(const HumanShapeField& field, const ParamStore& store,
                             const Vec3& x, const std::vector<double>& theta) {
  Tape tape;
  tape.check_finite = false;
  auto vars = store.attach(tape);
  Tensor p({1, 3});
  p[0] = x.x;
  p[1] = x.y;
  p[2] = x.z;
  Var xv = tape.constant(std::move(p), "probe_pt");
  Tensor trow({1, theta.size()});
  for (std::size_t j = 0; j < theta.size(); ++j) trow(0, j) = theta[j];
  Var th = tape.constant(std::move(trow), "probe_theta");
  const Tensor& g = field.eval_with_grad(tape, vars, xv, th).grad.value();
  return {g[0], g[1], g[2]};
}

// ---- HumanTextureField --------------------------------------------------------

HumanTextureField::HumanTextureField(TextureFieldConfig cfg, std::string prefix) : cfg_(cfg) {
  MlpConfig mc;
  mc.in_dim = 3 + 3 + cfg.pose_dim + cfg.d_z;
  mc.hidden = cfg.hidden;
  mc.hidden_layers = cfg.hidden_layers;
  mc.out_dim = 3;
  mc.sharpness = cfg.sharpness;
  mlp_ = Mlp(mc, std::move(prefix));
}

Var HumanTextureField::eval(Tape& tape, const VarMap& vars, Var x_c, Var n_d, Var theta_rows,
                            Var z) const {
  Var in = concat_cols({x_c, n_d, theta_rows, z});
  return sigmoid(mlp_.forward(tape, vars, in));
}

// ---- BackgroundField ----------------------------------------------------------

BackgroundField::BackgroundField(BackgroundFieldConfig cfg, std::string prefix)
    : cfg_(cfg), prefix_(prefix) {
  MlpConfig mc;
  mc.in_dim = FrequencyEncoding{cfg.pos_octaves}.out_dim(4) +
              FrequencyEncoding{cfg.dir_octaves}.out_dim(3) + cfg.latent_dim;
  mc.hidden = cfg.hidden;
  mc.hidden_layers = cfg.hidden_layers;
  mc.out_dim = 4;
  mc.sharpness = cfg.sharpness;
  mlp_ = Mlp(mc, prefix + "/net");
}

std::string BackgroundField::latent_name(const std::string& prefix, std::size_t frame) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", frame);
  return prefix + "/latent/" + buf;
}

void BackgroundField::init_params(ParamStore& store, Rng& rng) const {
  mlp_.init_params(store, rng);
  for (std::size_t f = 0; f < cfg_.num_frames; ++f)
    store.add(latent_name(f), Tensor({cfg_.latent_dim}, 0.0));
}

Var BackgroundField::latent_rows(Tape& tape, const VarMap& vars, std::size_t frame,
                                 std::size_t n) const {
  auto it = vars.find(latent_name(frame));
  if (it == vars.end())
    throw FieldError("no trained latent for frame " + std::to_string(frame));
  return repeat_rows(it->second, n);
}

Var BackgroundField::mean_latent_rows(Tape& tape, const VarMap& vars, std::size_t n) const {
  if (cfg_.num_frames == 0) throw FieldError("background field has no trained latents");
  Var acc = vars.at(latent_name(0));
  for (std::size_t f = 1; f < cfg_.num_frames; ++f) acc = add(acc, vars.at(latent_name(f)));
  return repeat_rows(scale(acc, 1.0 / static_cast<double>(cfg_.num_frames)), n);
}

BackgroundField::Eval BackgroundField::eval(Tape& tape, const VarMap& vars, Var xq, Var v,
                                            Var latent_rows) const {
  FrequencyEncoding pe{cfg_.pos_octaves}, de{cfg_.dir_octaves};
  Var in = concat_cols({pe.encode(tape, xq), de.encode(tape, v), latent_rows});
  Var out = mlp_.forward(tape, vars, in);
  Eval e;
  e.sigma = softplus(slice_cols(out, 0, 1), 1.0);
  e.rgb = sigmoid(slice_cols(out, 1, 4));
  return e;
}

// ---- DensityParams --------------------------------------------------------------

void DensityParams::init_params(ParamStore& store, double alpha0, double beta0) {
  store.add("density/log_alpha", Tensor::scalar(std::log(alpha0)));
  store.add("density/log_beta", Tensor::scalar(std::log(beta0)));
}

DensityParams::Vals DensityParams::attach(const VarMap& vars) {
  return {vexp(vars.at("density/log_alpha")), vexp(vars.at("density/log_beta"))};
}

Var DensityParams::density(Tape& tape, Var sdf, const Vals& vals) {
  return mul_scalarv(laplace_cdf(neg(sdf), vals.beta), vals.alpha);
}

double density_from_sdf(double alpha, double beta, double sdf) {
  const double xi = -sdf;
  const double cdf =
      xi >= 0.0 ? 1.0 - 0.5 * std::exp(-xi / beta) : 0.5 * std::exp(xi / beta);
  return alpha * cdf;
}

// ---- invert_sphere ------------------------------------------------------------

std::array<double, 4> invert_sphere(const Vec3& x_b, const Vec3& origin) {
  const Vec3 d = x_b - origin;
  const double r = d.norm();
  if (r < 1.0 - 1e-9)
    throw FieldError("invert_sphere: point at radius " + std::to_string(r) +
                     " lies inside the unit sphere");
  return {d.x / r, d.y / r, d.z / r, 1.0 / r};
}

// ---- geometric_init -------------------------------------------------------------

void geometric_init(const HumanShapeField& field, ParamStore& store, double radius,
                    std::uint64_t seed, int steps, std::size_t batch) {
  Rng rng(seed);
  field.init_params(store, rng);

  const std::size_t n_theta = field.config().pose_dim;
  // Private Adam state; the init runs before the training optimizer exists.
  std::vector<Tensor> m, v;
  for (const auto& e : store.entries()) {
    m.push_back(Tensor(e.value.shape, 0.0));
    v.push_back(Tensor(e.value.shape, 0.0));
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (int step = 1; step <= steps; ++step) {
    Tensor pts({batch, 3}), target({batch, 1});
    for (std::size_t i = 0; i < batch; ++i) {
      Vec3 p;
      if (i % 8 < 4) {
        p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      } else if (i % 8 < 7) {
        // Near-surface shell so the zero level set is fit tightly.
        Vec3 d{rng.normal(), rng.normal(), rng.normal()};
        p = d.normalized() * (radius + rng.normal(0.0, 0.15));
      } else {
        // Deep-interior ball; uniform box sampling rarely lands here.
        Vec3 d{rng.normal(), rng.normal(), rng.normal()};
        p = d.normalized() * (0.6 * radius * std::cbrt(rng.uniform()));
      }
      pts(i, 0) = p.x;
      pts(i, 1) = p.y;
      pts(i, 2) = p.z;
      target(i, 0) = p.norm() - radius;
    }

    Tape tape;
    auto vars = store.attach(tape);
    Var x = tape.constant(pts, "init_pts");
    Var th = tape.constant(Tensor({batch, n_theta}, 0.0), "init_theta");
    auto ev = field.eval_with_grad(tape, vars, x, th);
    Var err = sub(ev.sdf, tape.constant(target, "init_target"));
    Var fit = mean_all(mul(err, err));
    // Mild unit-gradient pressure keeps the fit from oscillating between
    // encoding frequencies.
    Var gnorm = vsqrt(offset(row_sum(mul(ev.grad, ev.grad)), 1e-12));
    Var gerr = offset(gnorm, -1.0);
    Var loss = add(fit, scale(mean_all(mul(gerr, gerr)), 0.01));
    tape.backward(loss);
    store.zero_grads();
    store.pull_grads(tape, vars);

    // cosine decay 1e-2 -> 1e-3
    const double u = static_cast<double>(step - 1) / std::max(1, steps - 1);
    const double lr = 1e-3 + 0.5 * (1e-2 - 1e-3) * (1.0 + std::cos(kPi * u));
    const double c1 = 1.0 - std::pow(b1, step), c2 = 1.0 - std::pow(b2, step);
    for (std::size_t p = 0; p < store.entries().size(); ++p) {
      auto& e = store.entries()[p];
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad[i];
        m[p][i] = b1 * m[p][i] + (1.0 - b1) * g;
        v[p][i] = b2 * v[p][i] + (1.0 - b2) * g * g;
        e.value[i] -= lr * (m[p][i] / c1) / (std::sqrt(v[p][i] / c2) + eps);
      }
      e.value.quantize();
    }
  }
  store.zero_grads();
}

}  // namespace recon
