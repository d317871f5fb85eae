#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rage/predictor.hpp"
#include "rage/trainer.hpp"

namespace rage {

/// Unreadable, corrupt or incompatible checkpoint. Shape and name problems
/// mention the offending tensor.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool operator==(const NamedTensor&) const = default;
};

/// File layout (little endian):
///   "RAGE" | u32 version | u64 n, n bytes of UTF-8 JSON header
///   | u64 tensor count | per tensor: u64 n, name, u8 rank, u64 extents[rank],
///     f32 data | u32 CRC-32 of every preceding byte
/// The header holds both configurations and the training state; tensors are
/// the parameters followed by "adam.m.<name>" and "adam.v.<name>" moments.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::size_t epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;  // +inf before the first validation
  std::size_t since_improvement = 0;
  std::uint64_t adam_step = 0;
  std::string rng_state;
  std::string precision = "f32";
  std::vector<EpochRecord> history;  // `seconds` is not persisted
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Verifies magic, CRC and version before decoding anything.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
Checkpoint make_checkpoint(const Predictor<T>& model, const TrainConfig& train,
                           const TrainerState<T>& state);

/// Copies parameters (and, if `state` is given, the optimizer and training
/// state) into `model`. Every tensor is checked against the model before any
/// value is written; the first missing, surplus or misshapen tensor in model
/// order is named in the error.
template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, Predictor<T>& model,
                      TrainerState<T>* state = nullptr);

/// Builds a predictor with the checkpoint's own configuration.
template <typename T>
std::unique_ptr<Predictor<T>> load_predictor(const Checkpoint& ckpt);

}  // namespace rage
