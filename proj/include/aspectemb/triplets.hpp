#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aspectemb/corpus.hpp"

namespace aspectemb {

enum class SchemeKind { SingleAspect, Intersection, Union, PairsOnly };

// Positive/negative sampling scheme. SingleAspect and PairsOnly carry exactly
// one aspect; Intersection and Union carry two or more distinct aspects.
struct SamplingScheme {
  SchemeKind kind = SchemeKind::SingleAspect;
  std::vector<std::string> aspects;

  static SamplingScheme single(std::string aspect);
  static SamplingScheme intersection(std::vector<std::string> aspects);
  static SamplingScheme set_union(std::vector<std::string> aspects);
  static SamplingScheme pairs_only(std::string aspect);

  std::string to_json() const;
  static SamplingScheme from_json(const std::string& text);
};

struct Triplet {
  std::string anchor_id;
  std::string positive_id;
  std::string negative_id;
  SamplingScheme scheme;
};

struct Pair {
  std::string anchor_id;
  std::string positive_id;
  std::string aspect;
};

struct TripletConfig {
  std::size_t per_anchor = 1;
  double background_negative_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct TripletGenResult {
  std::vector<Triplet> triplets;
  std::size_t anchors_without_positive = 0;
  std::size_t anchors_without_negative = 0;
};

// Two documents are positive when their label sets intersect on the scheme's
// aspect (SingleAspect/PairsOnly), on every aspect (Intersection), or on at
// least one aspect (Union). Background documents are never positive.
bool is_positive(const Document& a, const Document& b, const SamplingScheme& scheme);

// SingleAspect: disjoint label sets with a labeled anchor. Intersection and
// Union: label sets disjoint on every aspect of the scheme.
bool is_negative(const Document& a, const Document& b, const SamplingScheme& scheme);

// Throws if the scheme is malformed or names an aspect absent from the corpus.
void validate_scheme(const SamplingScheme& scheme, const Corpus& corpus);

// For each eligible anchor (corpus order), up to per_anchor triplets. The
// positive is drawn uniformly from the anchor's positive candidates; the
// negative comes from the background pool with probability
// background_negative_fraction, otherwise from the labeled negative
// candidates (falling back to the other pool when the chosen one is empty).
TripletGenResult generate_triplets(const Corpus& corpus, const SamplingScheme& scheme,
                                   const TripletConfig& cfg);

// All ordered anchor-positive pairs for the aspect, in seeded random order.
std::vector<Pair> generate_pairs(const Corpus& corpus, const std::string& aspect,
                                 std::uint64_t seed);

// True iff the anchor/positive/negative predicates hold and ids are distinct.
// Throws on ids that do not resolve or aspects unknown to the corpus.
bool validate_triplet(const Triplet& t, const Corpus& corpus);

void write_triplets_jsonl(const std::vector<Triplet>& triplets, const std::string& path);
std::vector<Triplet> read_triplets_jsonl(const std::string& path);

void write_pairs_jsonl(const std::vector<Pair>& pairs, const std::string& path);
std::vector<Pair> read_pairs_jsonl(const std::string& path);

}  // namespace aspectemb
