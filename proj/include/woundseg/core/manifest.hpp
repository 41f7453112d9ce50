#pragma once

// Dataset manifest: patients -> scans -> frame/mask pairs, with a split label
// per patient. Serialized as JSON.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "woundseg/core/error.hpp"
#include "woundseg/core/random.hpp"

namespace woundseg {

enum class Split { train = 0, val = 1, test = 2 };

inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::val, Split::test};

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValueError("unknown split '" + s + "' (expected train, val or test)");
}

struct FrameEntry {
  std::string image;
  std::string mask;
};

struct Scan {
  std::string id;
  std::vector<FrameEntry> frames;
};

struct Patient {
  std::string id;
  Split split = Split::train;
  std::vector<Scan> scans;
};

struct DatasetManifest {
  std::vector<Patient> patients;
  // Directory relative frame paths resolve against; not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }
};

// Stable identifier of a frame within a manifest: "<patient>/<scan>/<index>".
inline std::string frame_id(const Patient& p, const Scan& s, std::size_t index) {
  return p.id + "/" + s.id + "/" + std::to_string(index);
}

// Frame id with path separators replaced, for use as a file stem.
inline std::string frame_file_stem(const std::string& id) {
  std::string out = id;
  for (char& c : out)
    if (c == '/' || c == '\\') c = '_';
  return out;
}

struct FrameRef {
  std::string id;
  std::string scan_key;  // "<patient>/<scan>"
  std::filesystem::path image;
  std::filesystem::path mask;
};

inline std::vector<FrameRef> frames_in_split(const DatasetManifest& m, std::optional<Split> split) {
  std::vector<FrameRef> out;
  for (const auto& p : m.patients) {
    if (split && p.split != *split) continue;
    for (const auto& s : p.scans)
      for (std::size_t i = 0; i < s.frames.size(); ++i)
        out.push_back({frame_id(p, s, i), p.id + "/" + s.id, m.resolve(s.frames[i].image),
                       m.resolve(s.frames[i].mask)});
  }
  return out;
}

// ---- JSON ------------------------------------------------------------------

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json patients = nlohmann::ordered_json::array();
  for (const auto& p : m.patients) {
    nlohmann::ordered_json scans = nlohmann::ordered_json::array();
    for (const auto& s : p.scans) {
      nlohmann::ordered_json frames = nlohmann::ordered_json::array();
      for (const auto& f : s.frames) frames.push_back({{"image", f.image}, {"mask", f.mask}});
      scans.push_back({{"id", s.id}, {"frames", std::move(frames)}});
    }
    patients.push_back({{"id", p.id}, {"split", to_string(p.split)}, {"scans", std::move(scans)}});
  }
  return {{"patients", std::move(patients)}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    for (const auto& jp : j.at("patients")) {
      Patient p;
      p.id = jp.at("id").get<std::string>();
      p.split = parse_split(jp.at("split").get<std::string>());
      for (const auto& js : jp.at("scans")) {
        Scan s;
        s.id = js.at("id").get<std::string>();
        for (const auto& jf : js.at("frames")) {
          FrameEntry f;
          f.image = jf.at("image").get<std::string>();
          // A missing mask is kept empty so validation can name it.
          if (jf.contains("mask") && !jf.at("mask").is_null()) f.mask = jf.at("mask").get<std::string>();
          s.frames.push_back(std::move(f));
        }
        p.scans.push_back(std::move(s));
      }
      m.patients.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.base_dir = path.parent_path();
  return m;
}

inline std::string manifest_to_string(const DatasetManifest& m) {
  return manifest_to_json(m).dump(2) + "\n";
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << manifest_to_string(m);
}

// Rewrites relative frame paths so they resolve from `new_base`.
inline DatasetManifest rebase_manifest(DatasetManifest m, const std::filesystem::path& new_base) {
  namespace fs = std::filesystem;
  const fs::path target = fs::weakly_canonical(fs::absolute(new_base));
  auto rebase = [&](std::string& p) {
    if (p.empty()) return;
    const fs::path resolved = fs::weakly_canonical(fs::absolute(m.resolve(p)));
    p = resolved.lexically_relative(target).generic_string();
  };
  for (auto& pat : m.patients)
    for (auto& s : pat.scans)
      for (auto& f : s.frames) {
        rebase(f.image);
        rebase(f.mask);
      }
  m.base_dir = new_base;
  return m;
}

// ---- validation ------------------------------------------------------------

struct SplitCounts {
  std::size_t patients = 0;
  std::size_t scans = 0;
  std::size_t frames = 0;
};

struct ValidationReport {
  std::array<SplitCounts, 3> counts{};
  bool patient_disjoint = true;
  std::vector<std::string> problems;

  bool ok() const { return patient_disjoint && problems.empty(); }
  const SplitCounts& at(Split s) const { return counts[static_cast<int>(s)]; }
};

inline ValidationReport validate_manifest(const DatasetManifest& m) {
  ValidationReport r;
  std::map<std::string, Split> split_of;
  std::set<std::string> seen_frames;
  std::set<std::string> reported_patients;
  for (const auto& p : m.patients) {
    auto [it, fresh] = split_of.emplace(p.id, p.split);
    if (!fresh && it->second != p.split && reported_patients.insert(p.id).second) {
      r.patient_disjoint = false;
      r.problems.push_back("patient '" + p.id + "' appears in splits " + to_string(it->second) +
                           " and " + to_string(p.split));
    }
    auto& c = r.counts[static_cast<int>(p.split)];
    if (fresh) ++c.patients;
    c.scans += p.scans.size();
    for (const auto& s : p.scans) {
      for (std::size_t i = 0; i < s.frames.size(); ++i) {
        const auto& f = s.frames[i];
        ++c.frames;
        if (!seen_frames.insert(f.image).second)
          r.problems.push_back("duplicate frame path '" + f.image + "'");
        if (f.mask.empty())
          r.problems.push_back("frame '" + frame_id(p, s, i) + "' has no mask");
      }
    }
  }
  return r;
}

inline void require_valid(const DatasetManifest& m) {
  const auto r = validate_manifest(m);
  if (!r.ok()) throw ValueError("invalid manifest: " + r.problems.front());
}

// Counts table in the layout of a train/val/test distribution table.
inline std::string format_counts_table(const ValidationReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "" << std::setw(14) << "Training Set" << std::setw(16)
     << "Validation Set"
     << "Test Set\n";
  auto row = [&](const char* label, auto field) {
    os << std::setw(20) << label;
    os << std::setw(14) << field(r.at(Split::train)) << std::setw(16) << field(r.at(Split::val))
       << field(r.at(Split::test)) << '\n';
  };
  row("Number of Patients", [](const SplitCounts& c) { return c.patients; });
  row("Number of Scans", [](const SplitCounts& c) { return c.scans; });
  row("Number of Images", [](const SplitCounts& c) { return c.frames; });
  return os.str();
}

// ---- patient-level partition -------------------------------------------------

// Shuffles patients with a seeded RNG, gives every split with a nonzero
// fraction one patient, then assigns the rest to the split furthest below its
// target count. Ties go to train, then val, then test.
inline DatasetManifest partition_by_patient(DatasetManifest m, std::array<double, 3> fractions,
                                            std::uint64_t seed) {
  double total = 0.0;
  std::size_t nonzero = 0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ValueError("split fractions must be non-negative");
    total += f;
    if (f > 0.0) ++nonzero;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValueError("split fractions must sum to 1");
  // Group entries by patient id so repeated ids move together.
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> first_index;
  for (const auto& p : m.patients)
    if (first_index.emplace(p.id, ids.size()).second) ids.push_back(p.id);
  if (ids.size() < nonzero)
    throw ValueError("fewer patients (" + std::to_string(ids.size()) + ") than non-empty splits (" +
                     std::to_string(nonzero) + ")");

  Rng rng(seed);
  shuffle_in_place(ids, rng);

  const double n = static_cast<double>(ids.size());
  std::array<std::size_t, 3> assigned{};
  std::map<std::string, Split> label;
  std::size_t next = 0;
  for (int s = 0; s < 3; ++s) {
    if (fractions[s] > 0.0) {
      label[ids[next++]] = static_cast<Split>(s);
      ++assigned[s];
    }
  }
  for (; next < ids.size(); ++next) {
    int best = -1;
    double best_deficit = 0.0;
    for (int s = 0; s < 3; ++s) {
      if (fractions[s] <= 0.0) continue;
      const double deficit = fractions[s] * n - static_cast<double>(assigned[s]);
      if (best < 0 || deficit > best_deficit + 1e-12) {
        best = s;
        best_deficit = deficit;
      }
    }
    label[ids[next]] = static_cast<Split>(best);
    ++assigned[best];
  }
  for (auto& p : m.patients) p.split = label.at(p.id);
  return m;
}

}  // namespace woundseg
