#pragma once

#include <filesystem>
#include <memory>

#include "cle/io_util.hpp"
#include "cle/network.hpp"

namespace cle {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// The stored architecture differs from the network being restored.
class ArchitectureMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// In-memory form of a "CLCK" file: key=value metadata plus named float blobs.
struct Checkpoint {
  Metadata metadata;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  void put(std::string name, Shape shape, std::vector<float> values);
  const std::string& meta(const std::string& key) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters, batch-norm statistics and the model description of `net`,
/// merged with `extra` metadata.
template <typename T>
Checkpoint snapshot(Network<T>& net, const Metadata& extra = {});

/// Copies weights and statistics into `net`. Throws ArchitectureMismatch when
/// the stored model description or any tensor shape disagrees.
template <typename T>
void restore(Network<T>& net, const Checkpoint& ckpt);

/// Builds a fresh network from the stored description and restores it.
std::unique_ptr<Model> load_model(const std::filesystem::path& path, Checkpoint* out = nullptr);

}  // namespace cle
