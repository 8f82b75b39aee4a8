#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace aspectemb {

// One text unit with per-aspect label sets. Empty label sets are dropped at
// construction, so a background document is exactly one with an empty map.
struct Document {
  std::string id;
  std::string text;
  std::map<std::string, std::set<std::string>> labels;

  bool is_background() const { return labels.empty(); }

  // Label set for an aspect; empty set if the document has none.
  const std::set<std::string>& label_set(const std::string& aspect) const;
};

// Ordered document collection. Order is ingestion order and is stable.
class Corpus {
 public:
  Corpus() = default;
  // Validates ids (nonempty, unique) and label strings (nonempty),
  // drops empty label sets.
  explicit Corpus(std::vector<Document> docs);

  const std::vector<Document>& documents() const { return docs_; }
  const std::set<std::string>& aspects() const { return aspects_; }

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }

  bool contains(const std::string& id) const;
  // Throws if the id does not resolve.
  const Document& at(const std::string& id) const;

 private:
  std::vector<Document> docs_;
  std::set<std::string> aspects_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One knowledge-graph entity dump record: entity id, the linked article text
// (absent when the entity has no article), and property name -> value set.
struct KgEntityRecord {
  std::string entity_id;
  std::optional<std::string> article_text;
  std::map<std::string, std::set<std::string>> properties;
};

struct SplitSpec {
  double train_ratio = 0.8;
  std::uint64_t seed = 0;
};

struct KgBuildResult {
  Corpus corpus;
  std::size_t dropped_no_article = 0;
};

struct AspectStats {
  std::size_t documents = 0;       // documents with >= 1 label for the aspect
  std::size_t distinct_labels = 0;
};

struct CorpusStats {
  std::map<std::string, AspectStats> per_aspect;
  std::size_t background_documents = 0;
  std::size_t total_documents = 0;
};

inline constexpr std::size_t kDefaultMaxLabelInstances = 100;
inline constexpr std::size_t kDefaultMinChars = 100;

// Reads a corpus from JSONL ({"id":..., "text":..., "labels":{aspect:[...]}}).
// Malformed lines, duplicate ids and empty label strings are errors that name
// the offending line; nothing is silently skipped.
Corpus ingest_jsonl(const std::string& path);
Corpus parse_jsonl(std::istream& in, const std::string& origin);

void write_jsonl(const Corpus& corpus, const std::string& path);
void write_jsonl(const Corpus& corpus, std::ostream& out);

// Reads KG entity records from JSONL
// ({"entity_id":..., "article_text":..., "properties":{name:[...]}}).
std::vector<KgEntityRecord> read_kg_records(const std::string& path);

// One document per record that has an article; labels for each aspect are the
// value set of the mapped property. Records without an article are dropped
// and counted.
KgBuildResult build_from_kg(
    const std::vector<KgEntityRecord>& records,
    const std::map<std::string, std::string>& aspect_properties);

// Removes documents shorter than min_chars Unicode scalar values, then strips
// every (aspect,label) whose instance count exceeds max_label_instances.
// Documents that lose all labels are removed; documents that entered with no
// labels (background) are kept.
Corpus filter_corpus(const Corpus& corpus,
                     std::size_t max_label_instances = kDefaultMaxLabelInstances,
                     std::size_t min_chars = kDefaultMinChars);

// Seeded shuffle, then the first floor(n * train_ratio) documents form the
// train corpus and the rest the test corpus.
std::pair<Corpus, Corpus> split(const Corpus& corpus, const SplitSpec& spec);

CorpusStats corpus_stats(const Corpus& corpus);
std::string stats_to_json(const CorpusStats& stats);

// Number of Unicode scalar values in a UTF-8 string.
std::size_t utf8_length(const std::string& text);

}  // namespace aspectemb
