#pragma once

// On-disk corpus layout for one split named <prefix>:
//
//   <prefix>.feats   binary feature records (little-endian):
//                      bytes 0..7 magic "HMCTFEAT", u32 version (1), u64 record count
//                      per record: u32 len + utterance id, u32 len + speaker id,
//                                  u64 T, u64 d, T*d f64 values row-major
//   <prefix>.txt     transcript sidecar, "utt_id TAB word word ..." per line
//   <prefix>.ali     optional word alignment, "utt_id TAB begin-end begin-end ..."
//                    (input-frame ranges, end exclusive, one per word)

#include "hmctc/data/dataset.hpp"
#include "hmctc/numeric/serialize.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace hmctc::data {

inline constexpr char kFeatMagic[8] = {'H', 'M', 'C', 'T', 'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatVersion = 1;

inline void write_features(std::ostream& os, const Dataset& ds) {
  os.write(kFeatMagic, sizeof kFeatMagic);
  binio::put<std::uint32_t>(os, kFeatVersion);
  binio::put<std::uint64_t>(os, ds.size());
  for (const auto& u : ds) {
    binio::put_string(os, u.id);
    binio::put_string(os, u.speaker);
    binio::put<std::uint64_t>(os, u.features.rows());
    binio::put<std::uint64_t>(os, u.features.cols());
    binio::put_doubles(os, u.features.values());
  }
}

inline Dataset read_features(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kFeatMagic, sizeof magic) != 0) throw FormatError("not a feature file");
  const auto version = binio::get<std::uint32_t>(is);
  if (version != kFeatVersion) throw FormatError("unsupported feature file version " + std::to_string(version));
  const auto n = binio::get<std::uint64_t>(is);
  Dataset ds;
  ds.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1 << 20)));
  for (std::uint64_t i = 0; i < n; ++i) {
    Utterance u;
    u.id = binio::get_string(is);
    u.speaker = binio::get_string(is);
    const auto T = binio::get<std::uint64_t>(is);
    const auto d = binio::get<std::uint64_t>(is);
    if (T == 0 || d == 0 || T * d > (std::uint64_t{1} << 32)) throw FormatError("implausible shape for " + u.id);
    u.features = Tensor::zeros(T, d);
    binio::get_doubles(is, u.features.values());
    ds.push_back(std::move(u));
  }
  return ds;
}

inline void write_transcripts(std::ostream& os, const Dataset& ds) {
  for (const auto& u : ds) {
    os << u.id << '\t';
    for (std::size_t k = 0; k < u.words.size(); ++k) os << (k ? " " : "") << u.words[k];
    os << '\n';
  }
}

inline std::map<std::string, std::vector<std::string>> read_transcripts(std::istream& is) {
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("transcript line without tab: " + line);
    std::istringstream ws(line.substr(tab + 1));
    std::vector<std::string> words;
    for (std::string w; ws >> w;) words.push_back(w);
    out[line.substr(0, tab)] = std::move(words);
  }
  return out;
}

inline void write_alignments(std::ostream& os, const Dataset& ds) {
  for (const auto& u : ds) {
    if (u.word_spans.empty()) continue;
    os << u.id << '\t';
    for (std::size_t k = 0; k < u.word_spans.size(); ++k) {
      os << (k ? " " : "") << u.word_spans[k].begin << '-' << u.word_spans[k].end;
    }
    os << '\n';
  }
}

inline std::map<std::string, std::vector<WordSpan>> read_alignments(std::istream& is) {
  std::map<std::string, std::vector<WordSpan>> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("alignment line without tab: " + line);
    std::istringstream ss(line.substr(tab + 1));
    std::vector<WordSpan> spans;
    for (std::string tok; ss >> tok;) {
      const auto dash = tok.find('-');
      if (dash == std::string::npos) throw FormatError("bad word span '" + tok + "'");
      spans.push_back({std::stoul(tok.substr(0, dash)), std::stoul(tok.substr(dash + 1))});
    }
    out[line.substr(0, tab)] = std::move(spans);
  }
  return out;
}

inline void save_split(const std::filesystem::path& prefix, const Dataset& ds) {
  auto open = [](const std::filesystem::path& p, std::ios::openmode mode) {
    std::ofstream os(p, mode);
    if (!os) throw std::runtime_error("cannot open " + p.string() + " for writing");
    return os;
  };
  {
    auto os = open(prefix.string() + ".feats", std::ios::binary);
    write_features(os, ds);
  }
  {
    auto os = open(prefix.string() + ".txt", std::ios::out);
    write_transcripts(os, ds);
  }
  const bool any_ali = std::any_of(ds.begin(), ds.end(), [](const Utterance& u) { return !u.word_spans.empty(); });
  if (any_ali) {
    auto os = open(prefix.string() + ".ali", std::ios::out);
    write_alignments(os, ds);
  }
}

// Reads <prefix>.feats and joins transcripts (required) and alignments
// (optional) by utterance id.
inline Dataset load_split(const std::filesystem::path& prefix) {
  std::ifstream fs(prefix.string() + ".feats", std::ios::binary);
  if (!fs) throw std::runtime_error("cannot open " + prefix.string() + ".feats");
  Dataset ds = read_features(fs);
  std::ifstream ts(prefix.string() + ".txt");
  if (!ts) throw std::runtime_error("cannot open " + prefix.string() + ".txt");
  const auto transcripts = read_transcripts(ts);
  std::map<std::string, std::vector<WordSpan>> ali;
  if (std::ifstream as(prefix.string() + ".ali"); as) ali = read_alignments(as);
  for (auto& u : ds) {
    auto it = transcripts.find(u.id);
    if (it == transcripts.end()) throw FormatError("no transcript for utterance " + u.id);
    u.words = it->second;
    if (auto a = ali.find(u.id); a != ali.end()) u.word_spans = a->second;
  }
  return ds;
}

}  // namespace hmctc::data
