#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cle/video.hpp"

namespace cle {

struct VideoRecord {
  std::string path;  // relative to the manifest directory unless absolute
  int label = 0;
  int subject = 0;
  int camera = 0;
  std::size_t frames = 0;
};

/// CSV with header `path,label,subject,camera,frames`.
struct DatasetManifest {
  std::vector<VideoRecord> records;
  std::filesystem::path root;  // directory relative paths resolve against

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t num_classes() const;  // max label + 1
  std::filesystem::path resolve(const VideoRecord& r) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

enum class SplitRule { CrossSubject, CrossView, Random };

SplitRule parse_split_rule(const std::string& s);
const char* to_string(SplitRule r);

struct SplitSpec {
  SplitRule rule = SplitRule::CrossSubject;
  // The standard NTU RGB+D cross-subject training performers.
  std::vector<int> train_subjects{1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38};
  std::vector<int> train_cameras{2, 3};
  double test_fraction = 0.3;  // Random rule, applied per class
  std::uint64_t seed = 0;
};

/// Indices into the manifest; disjoint and together exhaustive.
struct Split {
  std::vector<std::size_t> train, test;
};

Split split_manifest(const DatasetManifest& m, const SplitSpec& spec);

/// Moves a per-class `fraction` of `train` into a validation list.
Split carve_validation(const DatasetManifest& m, const std::vector<std::size_t>& train, double fraction,
                       std::uint64_t seed);

/// In-memory preprocessed videos.
struct Dataset {
  std::vector<PreparedVideo> videos;
  std::size_t num_classes = 0;

  std::size_t size() const { return videos.size(); }
};

Dataset load_dataset(const DatasetManifest& m, const std::vector<std::size_t>& indices,
                     const PreprocessConfig& cfg, std::size_t num_classes = 0);

/// counts[class][bin] of reduced lengths under `edges`.
std::vector<std::vector<std::size_t>> length_histogram(const DatasetManifest& m,
                                                       const std::vector<std::size_t>& edges,
                                                       std::size_t num_classes = 0);

}  // namespace cle
