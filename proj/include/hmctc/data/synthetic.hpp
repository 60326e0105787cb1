#pragma once

// Seeded synthetic recognition task standing in for a real speech corpus.
//
// Each phone owns a fixed random template vector. An utterance is a word
// sequence; every phone of every word is rendered for a random number of
// frames as template + Gaussian noise, plus a per-speaker offset that
// speaker normalization is expected to remove. Word spellings are built from
// per-phone graphemes, some of them ambiguous (as in English orthography),
// so the subword task is related to, but not identical to, the phone task.

#include "hmctc/data/dataset.hpp"
#include "hmctc/numeric/rng.hpp"

#include <Eigen/QR>

#include <set>

namespace hmctc::data {

struct SyntheticSpec {
  int num_phones = 40;
  int num_words = 200;
  int feature_dim = 16;
  int min_words = 1;
  int max_words = 4;
  int min_word_phones = 2;
  int max_word_phones = 5;
  int min_duration = 2;  // frames per phone
  int max_duration = 4;
  double noise = 1.0;
  double speaker_shift = 0.5;
  // Weight of the neighbouring phone's template blended into a phone's first
  // and last frame.
  double coarticulation = 0.0;
  // Number of speaker "accents": random rotations of the feature space,
  // shared across splits, one per speaker. Zero disables them.
  int accents = 0;
  double zipf_exponent = 1.0;
  int speakers_per_split = 8;
  int train_size = 3000;
  int dev_size = 300;
  int test_size = 300;
  std::uint64_t seed = 20180801;

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw std::invalid_argument("synthetic spec: " + what);
    };
    require(num_phones >= 2, "num_phones must be at least 2");
    require(num_words >= 1, "num_words must be positive");
    require(feature_dim >= 1, "feature_dim must be positive");
    require(min_words >= 1 && max_words >= min_words, "word count range is invalid");
    require(min_word_phones >= 1 && max_word_phones >= min_word_phones, "word length range is invalid");
    require(min_duration >= 1 && max_duration >= min_duration, "duration range is invalid");
    require(noise >= 0 && speaker_shift >= 0, "noise levels must be non-negative");
    require(coarticulation >= 0 && coarticulation < 1, "coarticulation must be in [0, 1)");
    require(accents >= 0, "accents must be non-negative");
    require(speakers_per_split >= 1, "speakers_per_split must be positive");
    require(train_size >= 0 && dev_size >= 0 && test_size >= 0, "split sizes must be non-negative");
  }
};

struct SyntheticCorpus {
  tokenize::Lexicon lexicon;
  // [lexicon phones x feature_dim], row k is phone id k+1. Phones that no
  // word uses are left out of the lexicon and of this table.
  Tensor templates;
  Dataset train;
  Dataset dev;
  Dataset test;
};

namespace detail {

struct PhoneSymbol {
  const char* name;
  const char* grapheme;
};

// ARPAbet-style inventory with rough English spellings; several graphemes
// are shared on purpose.
inline constexpr PhoneSymbol kPhoneTable[] = {
    {"aa", "o"},  {"ae", "a"},  {"ah", "u"},  {"ao", "aw"}, {"aw", "ow"}, {"ax", "a"},  {"ay", "i"},
    {"b", "b"},   {"ch", "ch"}, {"d", "d"},   {"dh", "th"}, {"eh", "e"},  {"er", "er"}, {"ey", "ay"},
    {"f", "f"},   {"g", "g"},   {"hh", "h"},  {"ih", "i"},  {"iy", "ee"}, {"jh", "j"},  {"k", "k"},
    {"l", "l"},   {"m", "m"},   {"n", "n"},   {"ng", "ng"}, {"ow", "oa"}, {"oy", "oy"}, {"p", "p"},
    {"r", "r"},   {"s", "s"},   {"sh", "sh"}, {"t", "t"},   {"th", "th"}, {"uh", "oo"}, {"uw", "ue"},
    {"v", "v"},   {"w", "w"},   {"y", "y"},   {"z", "z"},   {"zh", "zh"},
};

}  // namespace detail

inline SyntheticCorpus gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto P = static_cast<std::size_t>(spec.num_phones);

  std::vector<std::string> names, graphemes;
  for (std::size_t k = 0; k < P; ++k) {
    if (k < std::size(detail::kPhoneTable)) {
      names.emplace_back(detail::kPhoneTable[k].name);
      graphemes.emplace_back(detail::kPhoneTable[k].grapheme);
    } else {
      names.push_back("x" + std::to_string(k));
      std::uniform_int_distribution<int> letter(0, 25);
      graphemes.push_back({static_cast<char>('a' + letter(rng)), static_cast<char>('a' + letter(rng))});
    }
  }

  // Lexicon phone ids follow sorted name order; remember the mapping so the
  // template matrix can be indexed by phone id.
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor by_index = Tensor::zeros(P, static_cast<std::size_t>(spec.feature_dim));
  for (auto& x : by_index.values()) x = normal(rng);

  std::map<std::string, std::vector<std::string>> entries;
  std::vector<std::string> spellings;
  std::vector<std::vector<std::size_t>> prons;
  std::set<std::vector<std::size_t>> seen_prons;
  std::uniform_int_distribution<int> wlen(spec.min_word_phones, spec.max_word_phones);
  std::uniform_int_distribution<std::size_t> phone(0, P - 1);
  for (int attempts = 0; static_cast<int>(spellings.size()) < spec.num_words; ++attempts) {
    if (attempts > spec.num_words * 1000) throw std::runtime_error("synthetic spec admits too few distinct words");
    std::vector<std::size_t> pron(static_cast<std::size_t>(wlen(rng)));
    for (std::size_t k = 0; k < pron.size(); ++k) {
      do {
        pron[k] = phone(rng);
      } while (k > 0 && pron[k] == pron[k - 1]);
    }
    std::string spelling;
    for (auto p : pron) spelling += graphemes[p];
    if (entries.count(spelling) || seen_prons.count(pron)) continue;
    std::vector<std::string> pron_names;
    for (auto p : pron) pron_names.push_back(names[p]);
    entries.emplace(spelling, std::move(pron_names));
    seen_prons.insert(pron);
    spellings.push_back(spelling);
    prons.push_back(pron);
  }

  SyntheticCorpus corpus;
  corpus.lexicon = tokenize::Lexicon(entries);
  corpus.templates = Tensor::zeros(corpus.lexicon.num_phones() - 1, static_cast<std::size_t>(spec.feature_dim));
  for (std::size_t k = 0; k < P; ++k) {
    if (std::find(corpus.lexicon.phones().begin(), corpus.lexicon.phones().end(), names[k]) ==
        corpus.lexicon.phones().end()) {
      continue;
    }
    const auto id = static_cast<std::size_t>(corpus.lexicon.phone_id(names[k]));
    auto src = by_index.row(k);
    std::copy(src.begin(), src.end(), corpus.templates.row(id - 1).begin());
  }

  std::vector<double> weights(spellings.size());
  for (std::size_t k = 0; k < weights.size(); ++k) weights[k] = std::pow(static_cast<double>(k + 1), -spec.zipf_exponent);
  std::discrete_distribution<std::size_t> pick_word(weights.begin(), weights.end());
  std::uniform_int_distribution<int> nwords(spec.min_words, spec.max_words);
  std::uniform_int_distribution<int> duration(spec.min_duration, spec.max_duration);
  const std::size_t d = static_cast<std::size_t>(spec.feature_dim);

  std::vector<RowMatrix> rotations;
  {
    auto arng = make_stream(spec.seed, "accents");
    for (int a = 0; a < spec.accents; ++a) {
      RowMatrix g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
      for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = normal(arng);
      rotations.push_back(Eigen::HouseholderQR<RowMatrix>(g).householderQ());
    }
  }

  auto make_split = [&](const std::string& name, int count) {
    std::vector<std::vector<double>> shifts(static_cast<std::size_t>(spec.speakers_per_split), std::vector<double>(d));
    for (auto& s : shifts) {
      for (auto& x : s) x = spec.speaker_shift * normal(rng);
    }
    Dataset ds;
    ds.reserve(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) {
      Utterance u;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s-%05d", name.c_str(), n);
      u.id = buf;
      const auto spk = static_cast<std::size_t>(n % spec.speakers_per_split);
      std::snprintf(buf, sizeof buf, "%s-spk%02zu", name.c_str(), spk);
      u.speaker = buf;

      // Adjacent words never share a boundary phone, so every phone target
      // fits whenever each phone lasts at least two input frames.
      std::vector<std::size_t> word_ids;
      for (int k = nwords(rng); k > 0; --k) {
        std::size_t w;
        do {
          w = pick_word(rng);
        } while (!word_ids.empty() && prons[word_ids.back()].back() == prons[w].front());
        word_ids.push_back(w);
      }
      std::vector<std::size_t> seq;
      std::vector<int> dur;
      for (auto w : word_ids) {
        u.words.push_back(spellings[w]);
        std::size_t begin = 0;
        for (int k : dur) begin += static_cast<std::size_t>(k);
        for (auto p : prons[w]) {
          seq.push_back(p);
          dur.push_back(duration(rng));
        }
        std::size_t end = begin;
        for (std::size_t k = seq.size() - prons[w].size(); k < seq.size(); ++k) end += static_cast<std::size_t>(dur[k]);
        u.word_spans.push_back({begin, end});
      }
      std::size_t T = 0;
      for (int k : dur) T += static_cast<std::size_t>(k);
      u.features = Tensor::zeros(T, d);
      std::size_t t = 0;
      for (std::size_t k = 0; k < seq.size(); ++k) {
        for (int f = 0; f < dur[k]; ++f, ++t) {
          auto row = u.features.row(t);
          const std::size_t nb = f == 0 && k > 0 ? seq[k - 1]
                                 : f == dur[k] - 1 && k + 1 < seq.size() ? seq[k + 1]
                                                                         : seq[k];
          const double mix = nb == seq[k] ? 0.0 : spec.coarticulation;
          Eigen::RowVectorXd base(static_cast<Eigen::Index>(d));
          for (std::size_t j = 0; j < d; ++j) {
            base(static_cast<Eigen::Index>(j)) = (1.0 - mix) * by_index(seq[k], j) + mix * by_index(nb, j);
          }
          if (!rotations.empty()) base = base * rotations[spk % rotations.size()];
          for (std::size_t j = 0; j < d; ++j) {
            row[j] = base(static_cast<Eigen::Index>(j)) + shifts[spk][j] + spec.noise * normal(rng);
          }
        }
      }
      ds.push_back(std::move(u));
    }
    return ds;
  };

  corpus.train = make_split("train", spec.train_size);
  corpus.dev = make_split("dev", spec.dev_size);
  corpus.test = make_split("test", spec.test_size);
  return corpus;
}

}  // namespace hmctc::data
