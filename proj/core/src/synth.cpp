#include "paratune/synth.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace paratune {

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

bool chance(std::mt19937_64& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

std::string pseudo_word(std::mt19937_64& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::string w;
  const std::size_t syllables = 2 + pick(rng, 2);
  for (std::size_t s = 0; s < syllables; ++s) {
    w += consonants[pick(rng, consonants.size())];
    w += vowels[pick(rng, vowels.size())];
  }
  return w;
}

void check_probability(const char* name, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(std::string("synth config: ") + name + " must be in [0, 1], got " + std::to_string(p));
  }
}

std::string alternative(const Lexicon& lex, int cluster, const std::string& current, std::mt19937_64& rng) {
  const auto& words = lex.cluster(static_cast<std::size_t>(cluster)).words;
  std::size_t k = pick(rng, words.size() - 1);
  if (words[k] == current) k = words.size() - 1;
  return words[k];
}

}  // namespace

std::string to_string(Pos pos) {
  switch (pos) {
    case Pos::det: return "det";
    case Pos::adj: return "adj";
    case Pos::noun: return "noun";
    case Pos::verb: return "verb";
    case Pos::prep: return "prep";
    case Pos::adv: return "adv";
  }
  return "?";
}

Lexicon Lexicon::generate(const LexiconConfig& c) {
  if (c.cluster_size < 2) throw std::invalid_argument("lexicon: cluster_size must be >= 2");
  if (c.topics < 1) throw std::invalid_argument("lexicon: topics must be >= 1");
  if (c.noun_clusters_per_topic < 2 || c.verb_clusters_per_topic < 1 || c.adj_clusters < 2 || c.det_clusters < 1 ||
      c.prep_clusters < 1 || c.adv_clusters < 1) {
    throw std::invalid_argument("lexicon: need >= 2 noun and adjective clusters and >= 1 of every other kind");
  }
  std::mt19937_64 rng(c.seed);
  std::set<std::string> used;
  auto fresh = [&] {
    for (;;) {
      std::string w = pseudo_word(rng);
      if (used.insert(w).second) return w;
    }
  };
  auto make = [&](Pos pos, int topic) {
    SynonymCluster cl{pos, topic, {}};
    const bool content = pos == Pos::adj || pos == Pos::noun || pos == Pos::verb || pos == Pos::adv;
    while (static_cast<int>(cl.words.size()) < c.cluster_size) {
      const bool last = static_cast<int>(cl.words.size()) == c.cluster_size - 1;
      cl.words.push_back(c.multiword && content && last ? fresh() + " " + fresh() : fresh());
    }
    return cl;
  };
  std::vector<SynonymCluster> clusters;
  for (int i = 0; i < c.det_clusters; ++i) clusters.push_back(make(Pos::det, -1));
  for (int i = 0; i < c.adj_clusters; ++i) clusters.push_back(make(Pos::adj, -1));
  for (int i = 0; i < c.prep_clusters; ++i) clusters.push_back(make(Pos::prep, -1));
  for (int i = 0; i < c.adv_clusters; ++i) clusters.push_back(make(Pos::adv, -1));
  for (int t = 0; t < c.topics; ++t) {
    for (int i = 0; i < c.noun_clusters_per_topic; ++i) clusters.push_back(make(Pos::noun, t));
    for (int i = 0; i < c.verb_clusters_per_topic; ++i) clusters.push_back(make(Pos::verb, t));
  }
  return Lexicon(std::move(clusters));
}

Lexicon::Lexicon(std::vector<SynonymCluster> clusters) : clusters_(std::move(clusters)) {
  for (std::size_t i = 0; i < clusters_.size(); ++i) {
    const auto& cl = clusters_[i];
    if (cl.words.size() < 2) throw std::invalid_argument("lexicon: every synonym set needs at least 2 members");
    topics_ = std::max(topics_, cl.topic + 1);
    for (const auto& w : cl.words) {
      if (!word_index_.emplace(w, static_cast<int>(i)).second) {
        throw std::invalid_argument("lexicon: entry '" + w + "' appears in two clusters");
      }
      max_entry_words_ = std::max(max_entry_words_, basic_tokenize(w).size());
    }
  }
  if (topics_ == 0) topics_ = 1;
}

int Lexicon::cluster_of(const std::string& entry) const {
  auto it = word_index_.find(entry);
  return it == word_index_.end() ? -1 : it->second;
}

std::vector<int> Lexicon::segment(std::span<const std::string> words) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < words.size();) {
    std::size_t taken = 1;
    int found = -1;
    for (std::size_t n = std::min(max_entry_words_, words.size() - i); n >= 1; --n) {
      std::string entry = words[i];
      for (std::size_t k = 1; k < n; ++k) entry += " " + words[i + k];
      if (int c = cluster_of(entry); c >= 0) {
        found = c;
        taken = n;
        break;
      }
    }
    out.push_back(found);
    i += taken;
  }
  return out;
}

Words SentencePlan::words() const {
  Words out;
  for (const auto& s : slots) {
    for (auto& w : basic_tokenize(s)) out.push_back(std::move(w));
  }
  return out;
}

std::vector<std::size_t> Lexicon::clusters_for(Pos pos, int topic) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clusters_.size(); ++i) {
    const auto& cl = clusters_[i];
    if (cl.pos == pos && (topic < 0 || cl.topic < 0 || cl.topic == topic)) out.push_back(i);
  }
  return out;
}

void SynthConfig::validate() const {
  check_probability("p_sub", p_sub);
  check_probability("p_reorder", p_reorder);
  check_probability("p_adj", p_adj);
  check_probability("p_pp", p_pp);
  check_probability("p_adv", p_adv);
  check_probability("noise", noise);
  check_probability("p_cross_topic", p_cross_topic);
  check_probability("p_unrelated", p_unrelated);
  if (negative_swaps == 0) throw std::invalid_argument("synth config: negative_swaps must be >= 1");
  if (lexicon.cluster_size < 2) throw std::invalid_argument("synth config: cluster_size must be >= 2");
}

SentencePlan SentenceSampler::sample(std::mt19937_64& rng, int topic) const {
  SentencePlan plan;
  plan.topic = topic;
  auto word_from = [&](Pos pos) {
    const auto ids = lex_->clusters_for(pos, topic);
    const std::size_t c = ids[pick(rng, ids.size())];
    const auto& words = lex_->cluster(c).words;
    plan.slots.push_back(words[pick(rng, words.size())]);
    plan.cluster.push_back(static_cast<int>(c));
  };
  auto phrase = [&](const std::string& role, std::initializer_list<Pos> head, bool np) {
    Constituent con{role, plan.slots.size(), 0};
    for (Pos p : head) word_from(p);
    if (np) {
      word_from(Pos::det);
      if (chance(rng, cfg_.p_adj)) word_from(Pos::adj);
      word_from(Pos::noun);
    }
    con.last = plan.slots.size() - 1;
    plan.constituents.push_back(con);
  };
  phrase("subject", {}, true);
  phrase("verb", {Pos::verb}, false);
  phrase("object", {}, true);
  if (chance(rng, cfg_.p_pp)) phrase("pp", {Pos::prep}, true);
  if (chance(rng, cfg_.p_adv)) phrase("adv", {Pos::adv}, false);
  return plan;
}

namespace {

// Word positions of each slot after flattening: first word index and word count.
std::vector<std::pair<std::size_t, std::size_t>> slot_words(const std::vector<std::string>& slots) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t at = 0;
  for (const auto& s : slots) {
    const std::size_t n = basic_tokenize(s).size();
    out.emplace_back(at, n);
    at += n;
  }
  return out;
}

}  // namespace

AlignedPairRecord paraphrase(const Lexicon& lex, const SentencePlan& src, double p_sub, double p_reorder,
                             std::mt19937_64& rng, SynthStats* stats, SentencePlan* target_plan) {
  std::vector<std::string> rewritten = src.slots;
  for (std::size_t i = 0; i < rewritten.size(); ++i) {
    if (chance(rng, p_sub)) {
      rewritten[i] = alternative(lex, src.cluster[i], rewritten[i], rng);
      if (stats) ++stats->substituted_words;
    }
  }
  std::vector<std::size_t> order(src.constituents.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (chance(rng, p_reorder)) {
    std::size_t moved = order.size();
    for (std::size_t i = 0; i < src.constituents.size(); ++i) {
      if (src.constituents[i].role == "pp") moved = i;
    }
    if (moved == order.size()) {
      for (std::size_t i = 0; i < src.constituents.size(); ++i) {
        if (src.constituents[i].role == "adv") moved = i;
      }
    }
    if (moved != order.size()) {
      order.erase(order.begin() + static_cast<std::ptrdiff_t>(moved));
      order.insert(order.begin(), moved);
      if (stats) ++stats->reordered;
    }
  }
  SentencePlan tgt;
  tgt.topic = src.topic;
  std::vector<std::pair<std::size_t, std::size_t>> tgt_slot_range(src.constituents.size());
  for (std::size_t c : order) {
    const auto& con = src.constituents[c];
    Constituent moved{con.role, tgt.slots.size(), 0};
    for (std::size_t i = con.first; i <= con.last; ++i) {
      tgt.slots.push_back(rewritten[i]);
      tgt.cluster.push_back(src.cluster[i]);
    }
    moved.last = tgt.slots.size() - 1;
    tgt_slot_range[c] = {moved.first, moved.last};
    tgt.constituents.push_back(moved);
  }
  const auto src_pos = slot_words(src.slots);
  const auto tgt_pos = slot_words(tgt.slots);
  AlignedPairRecord rec;
  rec.source = src.words();
  rec.target = tgt.words();
  for (std::size_t c = 0; c < src.constituents.size(); ++c) {
    const auto& con = src.constituents[c];
    const auto [tf, tl] = tgt_slot_range[c];
    rec.alignments.push_back(WordAlignment{src_pos[con.first].first,
                                           src_pos[con.last].first + src_pos[con.last].second - 1, tgt_pos[tf].first,
                                           tgt_pos[tl].first + tgt_pos[tl].second - 1});
  }
  if (stats) stats->alignments += rec.alignments.size();
  if (target_plan) *target_plan = std::move(tgt);
  return rec;
}

std::vector<AlignedPairRecord> generate_synthetic(const SynthConfig& config, SynthStats* stats) {
  config.validate();
  const Lexicon lex = Lexicon::generate(config.lexicon);
  SentenceSampler sampler(lex, config);
  std::mt19937_64 rng(config.seed);
  std::mt19937_64 noise_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<AlignedPairRecord> out;
  out.reserve(config.size);
  for (std::size_t n = 0; n < config.size; ++n) {
    const int topic = static_cast<int>(pick(rng, static_cast<std::size_t>(lex.topics())));
    AlignedPairRecord rec = paraphrase(lex, sampler.sample(rng, topic), config.p_sub, config.p_reorder, rng, stats);
    for (auto& a : rec.alignments) {
      if (!chance(noise_rng, config.noise)) continue;
      const std::size_t len = rec.target.size();
      std::size_t b = 0, e = 0;
      do {
        b = pick(noise_rng, len);
        e = std::min(len - 1, b + pick(noise_rng, 4));
      } while (b == a.tgt_first && e == a.tgt_last);
      a.tgt_first = b;
      a.tgt_last = e;
      if (stats) ++stats->corrupted;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<Document> generate_documents(const SynthConfig& config, std::size_t documents,
                                         std::size_t sentences_per_document) {
  config.validate();
  const Lexicon lex = Lexicon::generate(config.lexicon);
  SentenceSampler sampler(lex, config);
  std::mt19937_64 rng(config.seed);
  std::vector<Document> docs(documents);
  for (auto& doc : docs) {
    const int topic = static_cast<int>(pick(rng, static_cast<std::size_t>(lex.topics())));
    for (std::size_t s = 0; s < sentences_per_document; ++s) doc.push_back(sampler.sample(rng, topic).words());
  }
  return docs;
}

std::string to_string(DownstreamTask task) {
  switch (task) {
    case DownstreamTask::paraphrase: return "paraphrase";
    case DownstreamTask::similarity: return "similarity";
    case DownstreamTask::acceptability: return "acceptability";
  }
  return "?";
}

DownstreamTask parse_downstream_task(const std::string& s) {
  for (auto t : {DownstreamTask::paraphrase, DownstreamTask::similarity, DownstreamTask::acceptability}) {
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown downstream task '" + s + "'");
}

TaskKind task_kind(DownstreamTask task) {
  switch (task) {
    case DownstreamTask::paraphrase: return TaskKind::pair_classification;
    case DownstreamTask::similarity: return TaskKind::pair_regression;
    case DownstreamTask::acceptability: return TaskKind::single_sentence_classification;
  }
  return TaskKind::pair_classification;
}

Metric default_metric(DownstreamTask task) {
  switch (task) {
    case DownstreamTask::paraphrase: return Metric::accuracy;
    case DownstreamTask::similarity: return Metric::pearson;
    case DownstreamTask::acceptability: return Metric::accuracy;
  }
  return Metric::accuracy;
}

namespace {

// Replace up to k content slots (cluster ids in `cluster`) with a same-topic
// non-synonym. Returns the number of replacements made.
std::size_t swap_meaning(const Lexicon& lex, std::vector<std::string>& slots, std::vector<int>& cluster, int topic,
                         std::size_t k, std::mt19937_64& rng, double p_cross_topic = 0.0) {
  std::vector<std::size_t> content;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Pos p = lex.cluster(static_cast<std::size_t>(cluster[i])).pos;
    if (p == Pos::noun || p == Pos::verb || p == Pos::adj) content.push_back(i);
  }
  std::shuffle(content.begin(), content.end(), rng);
  std::size_t done = 0;
  for (std::size_t i : content) {
    if (done == k) break;
    const auto& own = lex.cluster(static_cast<std::size_t>(cluster[i]));
    std::vector<std::size_t> others;
    const bool cross = own.topic >= 0 && p_cross_topic > 0.0 && chance(rng, p_cross_topic);
    for (std::size_t c : lex.clusters_for(own.pos, cross ? -1 : topic)) {
      if (static_cast<int>(c) != cluster[i]) others.push_back(c);
    }
    if (others.empty()) continue;
    const std::size_t c = others[pick(rng, others.size())];
    const auto& ws = lex.cluster(c).words;
    slots[i] = ws[pick(rng, ws.size())];
    cluster[i] = static_cast<int>(c);
    ++done;
  }
  return done;
}

}  // namespace

std::vector<TaskExample> generate_task(const SynthConfig& config, DownstreamTask task, std::size_t n,
                                       std::uint64_t seed) {
  config.validate();
  const Lexicon lex = Lexicon::generate(config.lexicon);
  SentenceSampler sampler(lex, config);
  std::mt19937_64 rng(seed);
  std::vector<TaskExample> out;
  out.reserve(n);
  for (std::size_t e = 0; e < n; ++e) {
    const int topic = static_cast<int>(pick(rng, static_cast<std::size_t>(lex.topics())));
    SentencePlan s = sampler.sample(rng, topic);
    TaskExample ex;
    if (task == DownstreamTask::acceptability) {
      ex.label = 1;
      if (chance(rng, 0.5)) {
        ex.label = 0;
        for (;;) {
          const std::size_t i = pick(rng, s.slots.size()), j = pick(rng, s.slots.size());
          if (lex.cluster(static_cast<std::size_t>(s.cluster[i])).pos ==
              lex.cluster(static_cast<std::size_t>(s.cluster[j])).pos) {
            continue;
          }
          std::swap(s.slots[i], s.slots[j]);
          break;
        }
      }
      ex.first = s.words();
      out.push_back(std::move(ex));
      continue;
    }
    SentencePlan t;
    AlignedPairRecord rec = paraphrase(lex, s, config.p_sub, config.p_reorder, rng, nullptr, &t);
    ex.first = rec.source;
    if (task == DownstreamTask::paraphrase) {
      ex.label = 1;
      if (chance(rng, 0.5)) {
        if (config.p_unrelated > 0.0 && chance(rng, config.p_unrelated)) {
          const int other = static_cast<int>(pick(rng, static_cast<std::size_t>(lex.topics())));
          const SentencePlan u = sampler.sample(rng, other);
          paraphrase(lex, u, config.p_sub, config.p_reorder, rng, nullptr, &t);
        } else {
          swap_meaning(lex, t.slots, t.cluster, topic, config.negative_swaps, rng, config.p_cross_topic);
        }
        ex.label = 0;
      }
    } else {
      const std::size_t k = swap_meaning(lex, t.slots, t.cluster, topic, pick(rng, 5), rng);
      ex.label = 5.0 - 1.25 * static_cast<double>(k);
    }
    ex.second = t.words();
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace paratune
