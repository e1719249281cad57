// Command-line front end: build-dataset, select, train, evaluate, sweep-rho,
// verify-theory. Exit codes: 0 success, 2 validation error, 3 degenerate
// data, 1 anything else.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "citesum/corpus.hpp"
#include "citesum/errors.hpp"
#include "citesum/harness.hpp"
#include "citesum/losses.hpp"
#include "citesum/model.hpp"
#include "citesum/synthetic.hpp"

namespace fs = std::filesystem;
using namespace citesum;

namespace {

struct CommonArgs {
  std::string corpus_path;
  std::string config_path;
  std::string mode = "inductive";
  std::string out_dir = "out";
  std::uint64_t split_seed = 1;
  std::size_t train_size = 0, val_size = 0, test_size = 0;
  // Flag overrides mirroring TrainConfig keys; only set keys are applied.
  std::vector<std::string> overrides;
};

harness::TrainConfig resolve_config(const CommonArgs& args) {
  harness::TrainConfig cfg = args.config_path.empty()
                                 ? harness::TrainConfig::desk_defaults()
                                 : harness::load_config(args.config_path);
  if (!args.overrides.empty()) {
    std::string text = harness::config_to_text(cfg);
    for (const auto& kv : args.overrides) text += kv + "\n";
    cfg = harness::parse_config_text(text, "<flags>");
  }
  return cfg;
}

void add_config_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "TrainConfig key = value file");
  auto collect = [&args](const std::string& key) {
    return [key, &args](const std::string& v) { args.overrides.push_back(key + " = " + v); };
  };
  for (const char* key :
       {"scale", "encoder_lr", "decoder_lr", "encoder_warmup_steps",
        "decoder_warmup_steps", "total_steps", "alpha", "beta", "rho",
        "max_neighbors", "source_token_budget", "per_ref_token_budget",
        "checkpoint_every", "rng_seed", "negative_documents", "negative_tokens",
        "max_selected_sentences", "max_summary_length"}) {
    cmd->add_option_function<std::string>("--" + std::string(key), collect(key),
                                          "TrainConfig override");
  }
}

harness::CorpusBundle load_bundle(const CommonArgs& args,
                                  const harness::TrainConfig& cfg,
                                  bool need_cache) {
  auto loaded = corpus::load_corpus(args.corpus_path);
  if (loaded.dropped_references > 0)
    std::cerr << "warning: dropped " << loaded.dropped_references
              << " dangling reference(s)\n";
  std::size_t train = args.train_size, val = args.val_size, test = args.test_size;
  if (train + val + test == 0) {
    const std::size_t n = loaded.graph.num_nodes();
    val = std::max<std::size_t>(1, n / 10);
    test = std::max<std::size_t>(1, n / 10);
    train = n - val - test;
  }
  auto split = corpus::make_splits(loaded.graph, train, val, test,
                                   corpus::split_mode_from_string(args.mode),
                                   args.split_seed);
  auto bundle = harness::CorpusBundle::assemble(std::move(loaded.documents),
                                                std::move(split));
  const std::string cache_path = args.out_dir + "/selection_cache.jsonl";
  if (need_cache && fs::exists(cache_path))
    bundle.cache = selection::SelectionCache::load(cache_path);
  else
    harness::populate_selection_cache(bundle, cfg);
  return bundle;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << content;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"citation-aware summarization with graph contrastive learning"};
  app.require_subcommand(1);
  CommonArgs args;

  // ---- build-dataset
  auto* build = app.add_subcommand("build-dataset", "generate a synthetic corpus");
  synthetic::SyntheticConfig syn;
  build->add_option("--num-docs", syn.num_docs, "documents to generate");
  build->add_option("--vocab-size", syn.vocab_size, "synthetic vocabulary size");
  build->add_option("--avg-edges", syn.avg_edges, "mean out-degree");
  build->add_option("--rng-seed", syn.rng_seed, "generator seed");
  build->add_option("--out", args.out_dir, "output directory");

  // ---- select
  auto* select = app.add_subcommand("select", "populate the selection cache");
  select->add_option("--corpus", args.corpus_path, "corpus jsonl")->required();
  select->add_option("--mode", args.mode, "inductive|transductive");
  select->add_option("--split-seed", args.split_seed, "split seed");
  select->add_option("--sizes", [&args](const std::vector<std::string>& v) {
    if (v.size() != 3) return false;
    args.train_size = std::stoull(v[0]);
    args.val_size = std::stoull(v[1]);
    args.test_size = std::stoull(v[2]);
    return true;
  }, "train val test sizes")->expected(3);
  select->add_option("--out", args.out_dir, "output directory");
  add_config_flags(select, args);

  // ---- train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--corpus", args.corpus_path, "corpus jsonl")->required();
  train_cmd->add_option("--mode", args.mode, "inductive|transductive");
  train_cmd->add_option("--split-seed", args.split_seed, "split seed");
  train_cmd->add_option("--sizes", [&args](const std::vector<std::string>& v) {
    if (v.size() != 3) return false;
    args.train_size = std::stoull(v[0]);
    args.val_size = std::stoull(v[1]);
    args.test_size = std::stoull(v[2]);
    return true;
  }, "train val test sizes")->expected(3);
  train_cmd->add_option("--out", args.out_dir, "output directory");
  std::string resume_path;
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  bool dump_graphs = false;
  train_cmd->add_flag("--dump-graphs", dump_graphs,
                      "dump per-instance weighted graphs to instance_graphs.jsonl");
  add_config_flags(train_cmd, args);

  // ---- evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  eval_cmd->add_option("--corpus", args.corpus_path, "corpus jsonl")->required();
  eval_cmd->add_option("--mode", args.mode, "inductive|transductive");
  eval_cmd->add_option("--split-seed", args.split_seed, "split seed");
  eval_cmd->add_option("--sizes", [&args](const std::vector<std::string>& v) {
    if (v.size() != 3) return false;
    args.train_size = std::stoull(v[0]);
    args.val_size = std::stoull(v[1]);
    args.test_size = std::stoull(v[2]);
    return true;
  }, "train val test sizes")->expected(3);
  eval_cmd->add_option("--out", args.out_dir, "output directory");
  std::string checkpoint_path, eval_split = "test";
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test");
  add_config_flags(eval_cmd, args);

  // ---- sweep-rho
  auto* sweep_cmd = app.add_subcommand("sweep-rho", "train/evaluate per rho value");
  sweep_cmd->add_option("--corpus", args.corpus_path, "corpus jsonl")->required();
  sweep_cmd->add_option("--mode", args.mode, "inductive|transductive");
  sweep_cmd->add_option("--split-seed", args.split_seed, "split seed");
  sweep_cmd->add_option("--sizes", [&args](const std::vector<std::string>& v) {
    if (v.size() != 3) return false;
    args.train_size = std::stoull(v[0]);
    args.val_size = std::stoull(v[1]);
    args.test_size = std::stoull(v[2]);
    return true;
  }, "train val test sizes")->expected(3);
  sweep_cmd->add_option("--out", args.out_dir, "output directory");
  std::vector<double> rho_values;
  sweep_cmd->add_option("values", rho_values, "rho values")->required();
  add_config_flags(sweep_cmd, args);

  // ---- verify-theory
  auto* verify_cmd = app.add_subcommand(
      "verify-theory", "numerically verify the implicit-factorization claim");
  std::string instances_path;
  std::size_t verify_random = 10;
  std::size_t verify_steps = 12000;
  std::size_t verify_dim = 0;
  double verify_tol = 1e-2;
  double verify_k = 2.0;
  std::uint64_t verify_seed = 1;
  verify_cmd->add_option("--instances", instances_path,
                         "instance graph dump (jsonl) to verify instead of random");
  verify_cmd->add_option("--random", verify_random, "number of random problems");
  verify_cmd->add_option("--steps", verify_steps, "ascent steps per problem");
  verify_cmd->add_option("--dim", verify_dim, "embedding dim (0 = auto)");
  verify_cmd->add_option("--tolerance", verify_tol, "PASS threshold on |delta|");
  verify_cmd->add_option("--k", verify_k, "negatives per positive");
  verify_cmd->add_option("--rng-seed", verify_seed, "seed");
  verify_cmd->add_option("--out", args.out_dir, "output directory");

  try {
    app.parse(argc, argv);

    if (build->parsed()) {
      fs::create_directories(args.out_dir);
      const auto docs = synthetic::generate_synthetic_corpus(syn);
      corpus::save_corpus(args.out_dir + "/corpus.jsonl", docs);
      corpus::save_edge_list(args.out_dir + "/edges.tsv",
                             corpus::graph_from_documents(docs));
      std::cout << "wrote " << docs.size() << " documents to " << args.out_dir
                << "/corpus.jsonl\n";
      return 0;
    }

    if (select->parsed()) {
      const auto cfg = resolve_config(args);
      fs::create_directories(args.out_dir);
      auto loaded = corpus::load_corpus(args.corpus_path);
      std::size_t train = args.train_size, val = args.val_size, test = args.test_size;
      if (train + val + test == 0) {
        const std::size_t n = loaded.graph.num_nodes();
        val = std::max<std::size_t>(1, n / 10);
        test = std::max<std::size_t>(1, n / 10);
        train = n - val - test;
      }
      auto split = corpus::make_splits(loaded.graph, train, val, test,
                                       corpus::split_mode_from_string(args.mode),
                                       args.split_seed);
      auto bundle = harness::CorpusBundle::assemble(std::move(loaded.documents),
                                                    std::move(split));
      harness::populate_selection_cache(bundle, cfg);
      bundle.cache.save(args.out_dir + "/selection_cache.jsonl");
      std::cout << "cached " << bundle.cache.size() << " selection records\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const auto cfg = resolve_config(args);
      fs::create_directories(args.out_dir);
      auto bundle = load_bundle(args, cfg, true);
      bundle.cache.save(args.out_dir + "/selection_cache.jsonl");
      model::Model m(cfg.model_config(bundle.vocab.size()), cfg.rng_seed);
      std::uint64_t start_step = 0;
      if (!resume_path.empty())
        start_step = harness::load_checkpoint(m, bundle, resume_path);
      if (dump_graphs) {
        std::ofstream dump(args.out_dir + "/instance_graphs.jsonl");
        for (const auto& id : bundle.split.train_ids) {
          const auto plan = harness::build_training_instance(
              id, bundle, cfg, 0, harness::InstanceMode::training);
          if (plan) dump << harness::dump_instance_graph(*plan) << "\n";
        }
      }
      const auto result = harness::train(m, bundle, cfg, args.out_dir, start_step);
      std::cout << "trained " << cfg.total_steps << " steps ("
                << result.skipped_steps << " skipped); best checkpoint: "
                << result.best_checkpoint << " (val R1 "
                << result.best_val_rouge1 << ")\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      const auto cfg = resolve_config(args);
      fs::create_directories(args.out_dir);
      auto bundle = load_bundle(args, cfg, true);
      model::Model m(cfg.model_config(bundle.vocab.size()), cfg.rng_seed);
      harness::load_checkpoint(m, bundle, checkpoint_path);
      const auto& id_set = eval_split == "train" ? bundle.split.train_ids
                           : eval_split == "val" ? bundle.split.val_ids
                                                 : bundle.split.test_ids;
      std::vector<std::string> ids(id_set.begin(), id_set.end());
      const auto report =
          harness::evaluate(m, bundle, ids, cfg, eval_split, checkpoint_path);
      write_text(args.out_dir + "/eval_" + eval_split + ".txt", report.to_text());
      write_text(args.out_dir + "/eval_" + eval_split + ".jsonl", report.to_jsonl());
      std::cout << report.to_text();
      return 0;
    }

    if (sweep_cmd->parsed()) {
      const auto cfg = resolve_config(args);
      fs::create_directories(args.out_dir);
      auto bundle = load_bundle(args, cfg, true);
      const auto rows = harness::sweep_rho(rho_values, bundle, cfg, args.out_dir);
      write_text(args.out_dir + "/sweep_rho.txt", harness::sweep_table_text(rows));
      write_text(args.out_dir + "/sweep_rho.jsonl", harness::sweep_table_jsonl(rows));
      std::cout << harness::sweep_table_text(rows);
      return 0;
    }

    if (verify_cmd->parsed()) {
      fs::create_directories(args.out_dir);
      std::vector<losses::FactorizationProblem> problems;
      if (!instances_path.empty()) {
        std::ifstream in(instances_path);
        if (!in) throw ValidationError("cannot open " + instances_path);
        std::string line;
        while (std::getline(in, line))
          if (!line.empty())
            problems.push_back(
                harness::factorization_problem_from_dump(line, verify_k));
      } else {
        Rng rng(derive_seed(verify_seed, "verify_cli"));
        for (std::size_t i = 0; i < verify_random; ++i) {
          losses::FactorizationProblem p;
          const auto n_docs = static_cast<Eigen::Index>(2 + rng.below(4));
          const auto n_toks = static_cast<Eigen::Index>(6 + rng.below(15));
          p.counts = losses::Matrix::Zero(n_docs, n_toks);
          p.token_corpus_counts = Eigen::VectorXd::Zero(n_toks);
          for (Eigen::Index d = 0; d < n_docs; ++d)
            for (Eigen::Index t = 0; t < n_toks; ++t)
              if (rng.uniform() < 0.4)
                p.counts(d, t) = 1.0 + static_cast<double>(rng.below(3));
          for (Eigen::Index t = 0; t < n_toks; ++t)
            p.token_corpus_counts(t) =
                p.counts.col(t).sum() + static_cast<double>(1 + rng.below(3));
          p.doc_count = static_cast<double>(n_docs);
          p.negatives_per_positive = verify_k;
          problems.push_back(std::move(p));
        }
      }
      bool all_pass = true;
      std::ostringstream text, jsonl;
      for (std::size_t i = 0; i < problems.size(); ++i) {
        std::size_t dim = verify_dim;
        if (dim == 0) {
          dim = static_cast<std::size_t>(
              problems[i].counts.rows() + problems[i].counts.cols());
          if (problems[i].has_citation)
            dim = std::max(dim, static_cast<std::size_t>(
                                    problems[i].citation_weights.rows()));
        }
        const auto report = losses::verify_factorization(
            problems[i], dim, verify_steps, verify_seed + i, verify_tol);
        text << "# problem " << i << "\n" << report.to_text() << "\n";
        jsonl << report.to_jsonl();
        all_pass = all_pass && report.converged;
      }
      write_text(args.out_dir + "/verify_theory.txt", text.str());
      write_text(args.out_dir + "/verify_theory.jsonl", jsonl.str());
      std::cout << text.str();
      std::cout << (all_pass ? "ALL PASS" : "SOME FAIL") << "\n";
      return all_pass ? 0 : 3;
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const DegenerateDataError& e) {
    std::cerr << "degenerate data: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
