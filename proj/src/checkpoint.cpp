#include "gmixseq/checkpoint.hpp"

#include <sstream>

#include "gmixseq/io.hpp"

namespace gmixseq {

namespace {
constexpr char kCheckpointMagic[9] = "GMSQCKPT";
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  BinaryWriter w;
  w.u32(ck.version);
  w.str(ck.kind);
  w.u64(ck.hparams.size());
  for (const auto& [key, val] : ck.hparams) {
    w.str(key);
    w.f64(val);
  }
  w.u64(ck.seed);
  w.u64(ck.step);
  std::map<std::string, Matrix> tensors(ck.tensors.begin(), ck.tensors.end());
  w.named_matrices(tensors);
  w.u8(ck.has_optimizer ? 1 : 0);
  if (ck.has_optimizer) {
    w.named_matrices(ck.opt_m);
    w.named_matrices(ck.opt_v);
    w.i64(ck.opt_step);
  }
  w.write_file(path, kCheckpointMagic);
}

Checkpoint read_checkpoint(const std::string& path, const std::string& expected_kind) {
  BinaryReader r(path, kCheckpointMagic);
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unknown format version " + std::to_string(ck.version));
  ck.kind = r.str();
  if (!expected_kind.empty() && ck.kind != expected_kind)
    throw std::runtime_error("checkpoint: model kind is '" + ck.kind + "', expected '" + expected_kind + "'");
  const std::uint64_t nh = r.u64();
  for (std::uint64_t i = 0; i < nh; ++i) {
    std::string key = r.str();
    ck.hparams[key] = r.f64();
  }
  ck.seed = r.u64();
  ck.step = r.u64();
  ck.tensors = r.named_matrices();
  ck.has_optimizer = r.u8() != 0;
  if (ck.has_optimizer) {
    ck.opt_m = r.named_matrices();
    ck.opt_v = r.named_matrices();
    ck.opt_step = r.i64();
  }
  if (!r.at_end()) throw std::runtime_error("checkpoint: trailing bytes after last record");
  return ck;
}

Checkpoint snapshot(const std::string& kind, const std::map<std::string, double>& hparams, NamedParams params,
                    std::uint64_t seed, std::uint64_t step, const Adam* opt) {
  Checkpoint ck;
  ck.kind = kind;
  ck.hparams = hparams;
  ck.seed = seed;
  ck.step = step;
  for (auto& [name, p] : params) {
    if (ck.tensors.count(name)) throw std::logic_error("snapshot: duplicate parameter name " + name);
    ck.tensors[name] = p->value;
  }
  if (opt != nullptr) {
    ck.has_optimizer = true;
    const auto& m = opt->first_moments();
    const auto& v = opt->second_moments();
    const auto& named = opt->params();
    if (m.size() != named.size()) throw std::logic_error("snapshot: optimizer/parameter size mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
      ck.opt_m[named[i].first] = m[i];
      ck.opt_v[named[i].first] = v[i];
    }
    ck.opt_step = opt->step_count();
  }
  return ck;
}

void restore_params(const Checkpoint& ck, NamedParams params) {
  if (ck.tensors.size() != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch (file has " +
                             std::to_string(ck.tensors.size()) + ", model has " + std::to_string(params.size()) +
                             ")");
  for (auto& [name, p] : params) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw std::runtime_error("checkpoint: shape mismatch for tensor " + name);
    p->value = it->second;
    p->zero_grad();
  }
}

void restore_optimizer(const Checkpoint& ck, const NamedParams& params, Adam& opt) {
  if (!ck.has_optimizer) throw std::runtime_error("checkpoint: no optimizer state stored");
  std::vector<Matrix> m, v;
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& [name, p] : params) {
    auto im = ck.opt_m.find(name);
    auto iv = ck.opt_v.find(name);
    if (im == ck.opt_m.end() || iv == ck.opt_v.end())
      throw std::runtime_error("checkpoint: missing optimizer moments for " + name);
    m.push_back(im->second);
    v.push_back(iv->second);
  }
  opt.restore(std::move(m), std::move(v), ck.opt_step);
}

void save_gmeg(const std::string& path, GmegModel& model, std::uint64_t seed, std::uint64_t step,
               const Adam* opt) {
  write_checkpoint(path, snapshot("gmeg", model.hparams(), model.params(), seed, step, opt));
}

GmegModel load_gmeg(const std::string& path) {
  Checkpoint ck = read_checkpoint(path, "gmeg");
  GmegConfig cfg = GmegModel::config_from_hparams(ck.hparams);
  LossWeights weights;
  weights.rec = ck.hparams.at("w.rec");
  weights.cond = ck.hparams.at("w.cond");
  weights.w = ck.hparams.at("w.w");
  weights.emo = ck.hparams.at("w.emo");
  GmegModel model(cfg, weights);
  restore_params(ck, model.params());
  return model;
}

void save_nfmg(const std::string& path, NfmgModel& model, std::uint64_t seed, std::uint64_t step,
               const Adam* opt) {
  write_checkpoint(path, snapshot("nfmg", model.hparams(), model.params(), seed, step, opt));
}

NfmgModel load_nfmg(const std::string& path) {
  Checkpoint ck = read_checkpoint(path, "nfmg");
  NfmgConfig cfg = NfmgModel::config_from_hparams(ck.hparams);
  NfmgWeights weights;
  weights.kl = ck.hparams.at("w.kl");
  weights.vel = ck.hparams.at("w.vel");
  NfmgModel model(cfg, weights);
  restore_params(ck, model.params());
  return model;
}

std::string describe_checkpoint(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  std::ostringstream out;
  out << "kind=" << ck.kind << " version=" << ck.version << " seed=" << ck.seed << " step=" << ck.step
      << " optimizer=" << (ck.has_optimizer ? "yes" : "no") << "\n";
  out << "hyperparameters:\n";
  for (const auto& [key, val] : ck.hparams) out << "  " << key << " = " << val << "\n";
  out << "tensors:\n";
  std::size_t total = 0;
  for (const auto& [name, m] : ck.tensors) {
    out << "  " << name << " " << m.rows() << "x" << m.cols() << "\n";
    total += static_cast<std::size_t>(m.size());
  }
  out << "total parameters: " << total << "\n";
  return out.str();
}

}  // namespace gmixseq
