#pragma once

#include <map>
#include <string>

#include "gmixseq/gmeg.hpp"
#include "gmixseq/nfmg.hpp"
#include "gmixseq/optim.hpp"

namespace gmixseq {

constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint container: versioned, checksummed, named little-endian float64
/// tensors plus hyperparameters and optional optimizer state. load(save(m))
/// reproduces forward outputs bitwise.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string kind;  // "gmeg" | "nfmg"
  std::map<std::string, double> hparams;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::map<std::string, Matrix> tensors;
  bool has_optimizer = false;
  std::map<std::string, Matrix> opt_m, opt_v;
  std::int64_t opt_step = 0;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);

/// Verifies magic, checksum, and version; when expected_kind is non-empty a
/// mismatching model kind is rejected.
Checkpoint read_checkpoint(const std::string& path, const std::string& expected_kind = "");

Checkpoint snapshot(const std::string& kind, const std::map<std::string, double>& hparams, NamedParams params,
                    std::uint64_t seed, std::uint64_t step, const Adam* opt = nullptr);

/// Copies checkpoint tensors into the live parameters; the name sets and all
/// shapes must match exactly.
void restore_params(const Checkpoint& ck, NamedParams params);
void restore_optimizer(const Checkpoint& ck, const NamedParams& params, Adam& opt);

void save_gmeg(const std::string& path, GmegModel& model, std::uint64_t seed, std::uint64_t step,
               const Adam* opt = nullptr);
GmegModel load_gmeg(const std::string& path);

void save_nfmg(const std::string& path, NfmgModel& model, std::uint64_t seed, std::uint64_t step,
               const Adam* opt = nullptr);
NfmgModel load_nfmg(const std::string& path);

/// Human-readable header/tensor summary (the inspect-checkpoint verb).
std::string describe_checkpoint(const std::string& path);

}  // namespace gmixseq
