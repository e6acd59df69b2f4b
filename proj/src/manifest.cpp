#include "cle/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "cle/random.hpp"
#include "cle/windows.hpp"

namespace cle {

std::size_t DatasetManifest::num_classes() const {
  int hi = -1;
  for (const auto& r : records) hi = std::max(hi, r.label);
  return static_cast<std::size_t>(hi + 1);
}

std::filesystem::path DatasetManifest::resolve(const VideoRecord& r) const {
  std::filesystem::path p(r.path);
  return p.is_absolute() ? p : root / p;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  if (!std::getline(f, line) || trim(line) != "path,label,subject,camera,frames") {
    throw FormatError(path.string() + ": expected header path,label,subject,camera,frames");
  }
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cols = split(trim(line), ',');
    if (cols.size() != 5) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    }
    try {
      VideoRecord r;
      r.path = cols[0];
      r.label = static_cast<int>(parse_u64(cols[1]));
      r.subject = static_cast<int>(parse_u64(cols[2]));
      r.camera = static_cast<int>(parse_u64(cols[3]));
      r.frames = parse_u64(cols[4]);
      if (r.frames == 0) throw std::invalid_argument("zero frames");
      m.records.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::string out = "path,label,subject,camera,frames\n";
  for (const auto& r : m.records) {
    if (r.path.find(',') != std::string::npos) throw std::invalid_argument("path contains a comma");
    out += r.path + "," + std::to_string(r.label) + "," + std::to_string(r.subject) + "," +
           std::to_string(r.camera) + "," + std::to_string(r.frames) + "\n";
  }
  write_file_atomic(path, out);
}

SplitRule parse_split_rule(const std::string& s) {
  if (s == "cs" || s == "cross-subject") return SplitRule::CrossSubject;
  if (s == "cv" || s == "cross-view") return SplitRule::CrossView;
  if (s == "random") return SplitRule::Random;
  throw std::invalid_argument("unknown split rule '" + s + "' (cs, cv or random)");
}

const char* to_string(SplitRule r) {
  switch (r) {
    case SplitRule::CrossSubject: return "cs";
    case SplitRule::CrossView: return "cv";
    case SplitRule::Random: return "random";
  }
  return "?";
}

namespace {

// Per class: shuffle, then the first round(fraction * n) go to `picked`.
void stratified(const DatasetManifest& m, const std::vector<std::size_t>& pool, double fraction,
                std::uint64_t seed, std::vector<std::size_t>& kept, std::vector<std::size_t>& picked) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (auto i : pool) by_class[m.records[i].label].push_back(i);
  for (auto& [label, items] : by_class) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label), 0x5b1d));
    shuffle(items, rng);
    const auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(items.size())));
    for (std::size_t k = 0; k < items.size(); ++k) (k < n ? picked : kept).push_back(items[k]);
  }
  std::sort(kept.begin(), kept.end());
  std::sort(picked.begin(), picked.end());
}

}  // namespace

Split split_manifest(const DatasetManifest& m, const SplitSpec& spec) {
  Split s;
  if (spec.rule == SplitRule::Random) {
    if (spec.test_fraction < 0.0 || spec.test_fraction > 1.0) {
      throw std::invalid_argument("test fraction must be in [0,1]");
    }
    std::vector<std::size_t> all(m.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    stratified(m, all, spec.test_fraction, spec.seed, s.train, s.test);
    return s;
  }
  const std::set<int> subjects(spec.train_subjects.begin(), spec.train_subjects.end());
  const std::set<int> cameras(spec.train_cameras.begin(), spec.train_cameras.end());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m.records[i];
    const bool train = spec.rule == SplitRule::CrossSubject ? subjects.count(r.subject) > 0
                                                            : cameras.count(r.camera) > 0;
    (train ? s.train : s.test).push_back(i);
  }
  return s;
}

Split carve_validation(const DatasetManifest& m, const std::vector<std::size_t>& train, double fraction,
                       std::uint64_t seed) {
  Split s;
  stratified(m, train, fraction, mix_seed(seed, 0x7a1), s.train, s.test);
  return s;
}

Dataset load_dataset(const DatasetManifest& m, const std::vector<std::size_t>& indices,
                     const PreprocessConfig& cfg, std::size_t num_classes) {
  Dataset d;
  d.num_classes = num_classes ? num_classes : m.num_classes();
  d.videos.reserve(indices.size());
  for (auto i : indices) {
    const auto& r = m.records.at(i);
    VideoSample v = load_video(m.resolve(r));
    if (v.length != r.frames) {
      throw FormatError(r.path + ": manifest says " + std::to_string(r.frames) + " frames, file has " +
                        std::to_string(v.length));
    }
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= d.num_classes) {
      throw FormatError(r.path + ": label out of range");
    }
    v.label = r.label;
    d.videos.push_back(prepare_video(v, cfg));
  }
  return d;
}

std::vector<std::vector<std::size_t>> length_histogram(const DatasetManifest& m,
                                                       const std::vector<std::size_t>& edges,
                                                       std::size_t num_classes) {
  BinSchedule s;
  s.edges = edges;
  s.validate();
  const std::size_t k = std::max(num_classes, m.num_classes());
  std::vector<std::vector<std::size_t>> counts(k, std::vector<std::size_t>(edges.size(), 0));
  for (const auto& r : m.records) {
    const std::size_t reduced = assign_bin(r.frames, s);
    const auto bin = static_cast<std::size_t>(
        std::find(edges.begin(), edges.end(), reduced) - edges.begin());
    ++counts[static_cast<std::size_t>(r.label)][bin];
  }
  return counts;
}

}  // namespace cle
