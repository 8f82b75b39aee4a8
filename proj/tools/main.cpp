// Command-line front end wiring the pipeline together: corpus construction,
// filtering, splitting, triplet/pair generation, training, embedding,
// retrieval evaluation and 2D projection.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "aspectemb/corpus.hpp"
#include "aspectemb/encoder.hpp"
#include "aspectemb/retrieval.hpp"
#include "aspectemb/training.hpp"
#include "aspectemb/triplets.hpp"
#include "aspectemb/viz.hpp"

namespace {

using namespace aspectemb;

// Writes text output either to a file (binary mode, so bytes are exactly what
// we produce) or to stdout when no path was given.
void write_text_output(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    if (text.empty() || text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write to output file '" + path + "' failed");
}

std::map<std::string, std::string> parse_aspect_properties(
    const std::vector<std::string>& mappings) {
  std::map<std::string, std::string> result;
  for (const std::string& mapping : mappings) {
    const std::size_t eq = mapping.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == mapping.size()) {
      throw std::runtime_error("--aspect mapping '" + mapping + "' must look like name=property");
    }
    const std::string aspect = mapping.substr(0, eq);
    if (!result.emplace(aspect, mapping.substr(eq + 1)).second) {
      throw std::runtime_error("aspect '" + aspect + "' mapped twice");
    }
  }
  return result;
}

SamplingScheme make_scheme(const std::string& name, std::vector<std::string> aspects) {
  if (name == "single") {
    if (aspects.size() != 1) {
      throw std::runtime_error("scheme 'single' needs exactly one --aspect");
    }
    return SamplingScheme::single(aspects[0]);
  }
  if (name == "intersection") return SamplingScheme::intersection(std::move(aspects));
  if (name == "union") return SamplingScheme::set_union(std::move(aspects));
  if (name == "pairs") {
    if (aspects.size() != 1) {
      throw std::runtime_error("scheme 'pairs' needs exactly one --aspect");
    }
    return SamplingScheme::pairs_only(aspects[0]);
  }
  throw std::runtime_error("unknown scheme '" + name +
                           "' (expected single, intersection, union or pairs)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aspect-conditioned sentence embeddings: data preparation, contrastive training "
               "and retrieval evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t global_seed = 0;
  CLI::Option* seed_opt =
      app.add_option("--seed", global_seed, "Seed for every stochastic operation");

  // --- build-corpus ---------------------------------------------------------
  std::string bc_input, bc_output;
  std::vector<std::string> bc_aspects;
  CLI::App* build_cmd =
      app.add_subcommand("build-corpus", "Build a corpus from a knowledge-graph entity dump");
  build_cmd->add_option("--input", bc_input, "Entity records (JSONL)")->required();
  build_cmd->add_option("--output", bc_output, "Corpus file to write (JSONL)")->required();
  build_cmd->add_option("--aspect", bc_aspects, "Aspect mapping name=property (repeatable)")
      ->required();
  build_cmd->callback([&] {
    const auto records = read_kg_records(bc_input);
    const KgBuildResult result = build_from_kg(records, parse_aspect_properties(bc_aspects));
    write_jsonl(result.corpus, bc_output);
    std::cerr << "built corpus of " << result.corpus.size() << " documents ("
              << result.dropped_no_article << " records without article text dropped)\n";
  });

  // --- filter ---------------------------------------------------------------
  std::string fl_input, fl_output;
  std::size_t fl_max_instances = kDefaultMaxLabelInstances;
  std::size_t fl_min_chars = kDefaultMinChars;
  CLI::App* filter_cmd =
      app.add_subcommand("filter", "Drop short documents and over-represented labels");
  filter_cmd->add_option("--input", fl_input, "Corpus file (JSONL)")->required();
  filter_cmd->add_option("--output", fl_output, "Filtered corpus file (JSONL)")->required();
  filter_cmd->add_option("--max-label-instances", fl_max_instances,
                         "Strip labels held by more than this many documents");
  filter_cmd->add_option("--min-chars", fl_min_chars,
                         "Remove documents shorter than this many characters");
  filter_cmd->callback([&] {
    const Corpus corpus = ingest_jsonl(fl_input);
    const Corpus filtered = filter_corpus(corpus, fl_max_instances, fl_min_chars);
    write_jsonl(filtered, fl_output);
    std::cerr << "kept " << filtered.size() << " of " << corpus.size() << " documents\n";
  });

  // --- split ----------------------------------------------------------------
  std::string sp_input, sp_train, sp_test;
  double sp_ratio = 0.8;
  CLI::App* split_cmd = app.add_subcommand("split", "Shuffle and split a corpus into train/test");
  split_cmd->add_option("--input", sp_input, "Corpus file (JSONL)")->required();
  split_cmd->add_option("--train-output", sp_train, "Train corpus file")->required();
  split_cmd->add_option("--test-output", sp_test, "Test corpus file")->required();
  split_cmd->add_option("--train-ratio", sp_ratio, "Fraction of documents for training");
  split_cmd->callback([&] {
    const Corpus corpus = ingest_jsonl(sp_input);
    const auto [train_set, test_set] = split(corpus, SplitSpec{sp_ratio, global_seed});
    write_jsonl(train_set, sp_train);
    write_jsonl(test_set, sp_test);
    std::cerr << "split " << corpus.size() << " documents into " << train_set.size()
              << " train / " << test_set.size() << " test\n";
  });

  // --- stats ----------------------------------------------------------------
  std::string st_corpus, st_output;
  CLI::App* stats_cmd = app.add_subcommand("stats", "Per-aspect document and label counts");
  stats_cmd->add_option("--corpus", st_corpus, "Corpus file (JSONL)")->required();
  stats_cmd->add_option("--output", st_output, "Output file (default: stdout)");
  stats_cmd->callback([&] {
    const Corpus corpus = ingest_jsonl(st_corpus);
    write_text_output(stats_to_json(corpus_stats(corpus)), st_output);
  });

  // --- triplets -------------------------------------------------------------
  std::string tr_corpus, tr_scheme, tr_output;
  std::vector<std::string> tr_aspects;
  std::size_t tr_per_anchor = 1;
  double tr_bg_fraction = 0.5;
  CLI::App* triplets_cmd =
      app.add_subcommand("triplets", "Generate training triplets (or pairs) from a corpus");
  triplets_cmd->add_option("--corpus", tr_corpus, "Corpus file (JSONL)")->required();
  triplets_cmd
      ->add_option("--scheme", tr_scheme, "Sampling scheme: single, intersection, union, pairs")
      ->required();
  triplets_cmd->add_option("--aspect", tr_aspects, "Aspect name (repeatable)")->required();
  triplets_cmd->add_option("--output", tr_output, "Triplet/pair file to write (JSONL)")
      ->required();
  triplets_cmd->add_option("--per-anchor", tr_per_anchor, "Triplets per anchor document");
  triplets_cmd->add_option("--background-negative-fraction", tr_bg_fraction,
                           "Probability of drawing the negative from background documents");
  triplets_cmd->callback([&] {
    const Corpus corpus = ingest_jsonl(tr_corpus);
    const SamplingScheme scheme = make_scheme(tr_scheme, tr_aspects);
    if (scheme.kind == SchemeKind::PairsOnly) {
      const std::vector<Pair> pairs = generate_pairs(corpus, scheme.aspects[0], global_seed);
      write_pairs_jsonl(pairs, tr_output);
      std::cerr << "generated " << pairs.size() << " pairs\n";
      return;
    }
    TripletConfig cfg;
    cfg.per_anchor = tr_per_anchor;
    cfg.background_negative_fraction = tr_bg_fraction;
    cfg.seed = global_seed;
    const TripletGenResult result = generate_triplets(corpus, scheme, cfg);
    write_triplets_jsonl(result.triplets, tr_output);
    std::cerr << "generated " << result.triplets.size() << " triplets ("
              << result.anchors_without_positive << " anchors without positives, "
              << result.anchors_without_negative << " without negatives)\n";
  });

  // --- train ----------------------------------------------------------------
  std::string tn_corpus, tn_triplets, tn_pairs, tn_config, tn_output, tn_trace;
  std::size_t tn_embed_dim = kDefaultEmbedDim;
  std::size_t tn_hidden_dim = kDefaultHiddenDim;
  std::size_t tn_out_dim = kDefaultOutDim;
  std::size_t tn_min_freq = kDefaultMinFreq;
  CLI::App* train_cmd = app.add_subcommand("train", "Train an encoder on triplets or pairs");
  train_cmd->add_option("--corpus", tn_corpus, "Training corpus (JSONL)")->required();
  CLI::Option* tn_triplets_opt =
      train_cmd->add_option("--triplets", tn_triplets, "Triplet file (JSONL)");
  CLI::Option* tn_pairs_opt = train_cmd->add_option("--pairs", tn_pairs, "Pair file (JSONL)");
  tn_triplets_opt->excludes(tn_pairs_opt);
  train_cmd->add_option("--config", tn_config, "key=value training config file");
  train_cmd->add_option("--output", tn_output, "Model file to write")->required();
  train_cmd->add_option("--trace", tn_trace, "Loss trace CSV to write");
  train_cmd->add_option("--embed-dim", tn_embed_dim, "Token embedding dimension");
  train_cmd->add_option("--hidden-dim", tn_hidden_dim, "Hidden layer dimension");
  train_cmd->add_option("--out-dim", tn_out_dim, "Output embedding dimension");
  train_cmd->add_option("--min-freq", tn_min_freq, "Minimum token frequency for the vocabulary");
  train_cmd->callback([&] {
    if (tn_triplets.empty() == tn_pairs.empty()) {
      throw std::runtime_error("train needs exactly one of --triplets or --pairs");
    }
    const Corpus corpus = ingest_jsonl(tn_corpus);

    TrainConfig cfg;
    if (!tn_config.empty()) cfg = load_train_config(tn_config);
    if (seed_opt->count() > 0 || tn_config.empty()) cfg.seed = global_seed;
    if (tn_config.empty()) {
      cfg.objective =
          tn_pairs.empty() ? Objective::Contrastive : Objective::MultipleNegativesRanking;
    }

    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const Document& doc : corpus.documents()) texts.push_back(doc.text);
    Vocabulary vocab = build_vocab(texts, tn_min_freq);
    std::cerr << "vocabulary of " << vocab.size() << " tokens over " << corpus.size()
              << " documents\n";

    EncoderParams params = init_params(cfg.seed, std::move(vocab), tn_embed_dim, tn_hidden_dim,
                                       tn_out_dim, cfg.pooling, cfg.max_seq_len);
    LossTrace trace;
    if (!tn_triplets.empty()) {
      trace = train(corpus, read_triplets_jsonl(tn_triplets), params, cfg);
    } else {
      trace = train(corpus, read_pairs_jsonl(tn_pairs), params, cfg);
    }
    save_params(params, tn_output);
    if (!tn_trace.empty()) write_loss_trace(trace, tn_trace);

    const TraceStep& last = trace.steps.back();
    std::cerr << "trained " << cfg.epochs << " epochs, " << trace.steps.size()
              << " steps; final batch loss " << last.loss << "; model written to " << tn_output
              << '\n';
  });

  // --- embed ----------------------------------------------------------------
  std::string em_model, em_corpus, em_output;
  CLI::App* embed_cmd = app.add_subcommand("embed", "Embed every document of a corpus");
  embed_cmd->add_option("--model", em_model, "Model file")->required();
  embed_cmd->add_option("--corpus", em_corpus, "Corpus file (JSONL)")->required();
  embed_cmd->add_option("--output", em_output, "Embedding file to write")->required();
  embed_cmd->callback([&] {
    const EncoderParams params = load_params(em_model);
    const Corpus corpus = ingest_jsonl(em_corpus);
    if (corpus.empty()) throw std::runtime_error("corpus '" + em_corpus + "' is empty");
    std::ofstream out(em_output, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file '" + em_output + "'");
    std::size_t empty_inputs = 0;
    for (const Document& doc : corpus.documents()) {
      const TokenIds ids = tokenize(doc.text, params.vocab, params.max_seq_len);
      bool empty_input = false;
      const Vec vec = encode(params, ids, &empty_input);
      if (empty_input) ++empty_inputs;
      write_external_embedding(out, doc.id, vec);
    }
    if (!out) throw std::runtime_error("write to output file '" + em_output + "' failed");
    std::cerr << "embedded " << corpus.size() << " documents";
    if (empty_inputs > 0) std::cerr << " (" << empty_inputs << " with empty token sequences)";
    std::cerr << '\n';
  });

  // --- eval -----------------------------------------------------------------
  std::string ev_corpus, ev_embeddings, ev_aspect, ev_output, ev_mrr_mode = "first";
  std::size_t ev_k = 10;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Aspect-conditioned retrieval metrics over an embedding file");
  eval_cmd->add_option("--corpus", ev_corpus, "Labeled corpus (JSONL)")->required();
  eval_cmd->add_option("--embeddings", ev_embeddings, "Embedding file (id v1 ... vd)")
      ->required();
  eval_cmd->add_option("--aspect", ev_aspect, "Aspect to evaluate")->required();
  eval_cmd->add_option("--k", ev_k, "Neighborhood size");
  eval_cmd->add_option("--mrr-mode", ev_mrr_mode,
                       "'first' (first relevant neighbor) or 'all' (all relevant neighbors)");
  eval_cmd->add_option("--output", ev_output, "Output file (default: stdout)");
  eval_cmd->callback([&] {
    MrrMode mode;
    if (ev_mrr_mode == "first") {
      mode = MrrMode::FirstRelevant;
    } else if (ev_mrr_mode == "all") {
      mode = MrrMode::AllRelevant;
    } else {
      throw std::runtime_error("unknown --mrr-mode '" + ev_mrr_mode + "'");
    }
    const Corpus corpus = ingest_jsonl(ev_corpus);
    const EmbeddingIndex index = build_index(load_external_embeddings(ev_embeddings));
    const EvalReport report = evaluate(index, corpus, ev_aspect, ev_k, mode);
    write_text_output(report_to_json(report), ev_output);
    std::cerr << "aspect '" << report.aspect << "': P@" << report.k << ' ' << report.precision
              << ", R@" << report.k << ' ' << report.recall << ", MRR@" << report.k << ' '
              << report.mrr << " over " << (report.queries.size() - report.skipped_queries)
              << " queries (" << report.skipped_queries << " skipped)\n";
  });

  // --- project --------------------------------------------------------------
  std::string pj_embeddings, pj_corpus, pj_aspect, pj_output;
  CLI::App* project_cmd =
      app.add_subcommand("project", "2D projection of an embedding file as an SVG scatter plot");
  project_cmd->add_option("--embeddings", pj_embeddings, "Embedding file")->required();
  project_cmd->add_option("--corpus", pj_corpus, "Corpus used for label colors (JSONL)")
      ->required();
  project_cmd->add_option("--aspect", pj_aspect, "Aspect whose labels color the points")
      ->required();
  project_cmd->add_option("--output", pj_output, "SVG file to write")->required();
  project_cmd->callback([&] {
    const Corpus corpus = ingest_jsonl(pj_corpus);
    if (corpus.aspects().count(pj_aspect) == 0) {
      throw std::runtime_error("aspect '" + pj_aspect + "' does not occur in the corpus");
    }
    std::vector<ProjectedPoint> points =
        pca_project(load_external_embeddings(pj_embeddings), 2);
    assign_color_keys(points, corpus, pj_aspect);
    emit_scatter(points, pj_output);
    std::cerr << "projected " << points.size() << " points to " << pj_output << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
