#include "clir/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>

#include "clir/config.hpp"
#include "clir/embeddings.hpp"
#include "clir/error.hpp"
#include "clir/evaluation.hpp"
#include "clir/random.hpp"
#include "clir/retrieval.hpp"
#include "clir/synth.hpp"
#include "clir/training.hpp"

namespace clir {

namespace {

struct Session {
    std::string command;
    Config cfg;
    std::ostream& out;
};

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

std::string fixed4(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

/// Every output artifact gets the effective configuration alongside it.
void echo_config(const Session& s, const std::string& artifact) {
    write_file(artifact + ".config", "# clir " + s.command + "\n" + s.cfg.format());
}

std::set<std::string> query_ids(const QuerySet& qs) {
    std::set<std::string> ids;
    for (const auto& q : qs) ids.insert(q.id);
    return ids;
}

QuerySet merge_queries(const std::vector<const QuerySet*>& sets) {
    std::vector<BilingualQuery> all;
    std::set<std::string> seen;
    for (const auto* qs : sets)
        for (const auto& q : *qs)
            if (seen.insert(q.id).second) all.push_back(q);
    return QuerySet(std::move(all));
}

RankerConfig ranker_config(const Config& c) {
    RankerConfig r;
    r.arch = parse_arch(c.require("ranker.arch"));
    r.embed_dim = c.get_size("ranker.embed_dim");
    r.k_pool = c.get_size("ranker.k_pool");
    r.filter_sizes = c.get_size_list("ranker.filter_sizes");
    r.filters_per_size = c.get_size("ranker.filters_per_size");
    r.l_q = c.get_size("ranker.l_q");
    r.l_d = c.get_size("ranker.l_d");
    r.dropout = c.get_double("ranker.dropout");
    r.bilingual = c.get_bool("ranker.bilingual");
    r.share_components = c.get_bool("ranker.share_components");
    r.term_mlp_hidden = c.get_size("ranker.term_mlp_hidden");
    r.pacrr_mlp_hidden = c.get_size("ranker.pacrr_mlp_hidden");
    r.row_mlp_hidden = c.get_size("ranker.row_mlp_hidden");
    r.validate();
    return r;
}

struct EmbeddingPair {
    EmbeddingMatrix source, target;
};

/// Source vectors plus target vectors mapped into the source space when an alignment is given.
EmbeddingPair load_embedding_pair(const Config& c) {
    EmbeddingPair e{load_embeddings(c.require("paths.source_embeddings")),
                    load_embeddings(c.require("paths.target_embeddings"))};
    if (c.has("paths.alignment")) e.target = apply_alignment(load_alignment(c.raw("paths.alignment")), e.target);
    return e;
}

// -- commands ----------------------------------------------------------------

void cmd_gen_synth(Session& s) {
    const Config& c = s.cfg;
    const std::uint64_t seed = c.get_u64("experiment.seed");
    const std::filesystem::path dir = c.require("paths.out_dir");
    CipherOptions o;
    o.seed = seed;
    o.n_docs = c.get_size("synth.n_docs");
    o.n_queries = c.get_size("synth.n_queries");
    o.vocab_size = c.get_size("synth.vocab_size");
    o.embed_dim = c.get_size("synth.embed_dim");
    o.doc_len_min = c.get_size("synth.doc_len_min");
    o.doc_len_max = c.get_size("synth.doc_len_max");
    if (c.has("synth.world_seed")) o.world_seed = c.get_u64("synth.world_seed");
    o.source_lang = c.require("synth.source_lang");
    o.target_lang = c.require("synth.target_lang");
    const double noise = c.get_double("synth.noise");
    const double held_out = c.get_double("synth.test_lexicon_fraction");
    if (noise < 0.0 || noise > 1.0) throw UsageError("synth.noise must lie in [0, 1]");
    if (held_out < 0.0 || held_out >= 1.0) throw UsageError("synth.test_lexicon_fraction must lie in [0, 1)");

    CipherDataset ds = gen_cipher_dataset(o);
    const auto split = split_queries(ds.queries, c.get_size("synth.n_train"), c.get_size("synth.n_dev"),
                                     c.get_size("synth.n_test"));
    Corpus docs = ds.target_docs;
    QuerySet queries = merge_queries({&split.train, &split.dev, &split.test});
    QuerySplit parts = split;
    if (noise > 0.0) {
        docs = inject_translation_noise(docs, noise, ds.source_embeddings.tokens(), mix_seed(seed, 11));
        queries = inject_translation_noise(queries, noise, ds.target_embeddings.tokens(), mix_seed(seed, 12));
        auto pick = [&](const QuerySet& qs) {
            std::vector<BilingualQuery> out;
            for (const auto& q : qs) out.push_back(queries.at(q.id));
            return QuerySet(std::move(out));
        };
        parts = {pick(split.train), pick(split.dev), pick(split.test)};
    }

    Lexicon lex = ds.gold_lexicon;
    Rng rng(mix_seed(seed, 13));
    shuffle(lex, rng);
    const auto n_test = static_cast<std::size_t>(held_out * static_cast<double>(lex.size()));
    const Lexicon test(lex.begin(), lex.begin() + static_cast<std::ptrdiff_t>(n_test));
    Lexicon train(lex.begin() + static_cast<std::ptrdiff_t>(n_test), lex.end());
    std::sort(train.begin(), train.end());
    Lexicon sorted_test = test;
    std::sort(sorted_test.begin(), sorted_test.end());

    std::filesystem::create_directories(dir);
    auto at = [&](const char* name) { return (dir / name).string(); };
    save_documents(docs, at("docs.jsonl"));
    save_queries(queries, at("queries.jsonl"));
    save_queries(parts.train, at("train_queries.jsonl"));
    save_queries(parts.dev, at("dev_queries.jsonl"));
    save_queries(parts.test, at("test_queries.jsonl"));
    save_qrels(ds.qrels, at("qrels.txt"));
    save_embeddings(ds.source_embeddings, at("source.vec"));
    save_embeddings(ds.target_embeddings, at("target.vec"));
    save_lexicon(train, at("lexicon.tsv"));
    save_lexicon(sorted_test, at("test_lexicon.tsv"));
    save_lexicon(ds.gold_lexicon, at("dictionary.tsv"));
    std::string table;
    for (const auto& [src, tgt] : ds.gold_lexicon) table += src + "\t" + tgt + "\t1\n";
    write_file(at("translation_table.tsv"), table);
    echo_config(s, at("dataset"));
    s.out << "docs=" << docs.size() << " queries=" << queries.size() << " train=" << parts.train.size()
          << " dev=" << parts.dev.size() << " test=" << parts.test.size() << " lexicon=" << train.size()
          << " test_lexicon=" << sorted_test.size() << " dir=" << dir.string() << "\n";
}

void cmd_index(Session& s) {
    const Config& c = s.cfg;
    const auto index = build_index(load_documents(c.require("paths.docs")), parse_index_side(c.require("retrieval.side")));
    const std::string& output = c.require("paths.output");
    write_file(output, index_to_json(index) + "\n");
    echo_config(s, output);
    s.out << "indexed docs=" << index.num_docs() << " terms=" << index.all_postings().size()
          << " side=" << to_string(index.side()) << "\n";
}

void cmd_search(Session& s) {
    const Config& c = s.cfg;
    const std::string mode = c.require("retrieval.mode");
    if (mode != "ql" && mode != "dbqt" && mode != "psq") throw UsageError("retrieval.mode must be ql, dbqt or psq");
    const InvertedIndex index = c.has("paths.index")
                                    ? load_index(c.raw("paths.index"))
                                    : build_index(load_documents(c.require("paths.docs")),
                                                  parse_index_side(c.require("retrieval.side")));
    const QuerySet queries = load_queries(c.require("paths.queries"));
    const double mu = c.get_double("retrieval.mu");
    const std::size_t k = c.get_size("retrieval.k");
    if (!(mu > 0.0)) throw UsageError("retrieval.mu must be positive");

    BilingualDictionary dict;
    TranslationTable table;
    if (mode == "dbqt") dict = load_dictionary(c.require("paths.dictionary"));
    if (mode == "psq") table = load_translation_table(c.require("paths.translation_table"));
    Run run;
    for (const auto& q : queries) {
        const WeightedQuery wq = mode == "ql"     ? plain_query(q.terms)
                                 : mode == "dbqt" ? translate_query_dbqt(q.terms, dict)
                                                  : expand_query_psq(q.terms, table);
        run[q.id] = retrieve_topk(index, wq, k, mu, q.id);
    }
    const std::string& output = c.require("paths.output");
    save_run(run, c.has("retrieval.tag") ? c.raw("retrieval.tag") : mode, output);
    echo_config(s, output);
    std::size_t lines = 0;
    for (const auto& [qid, list] : run) lines += list.entries.size();
    s.out << "searched queries=" << run.size() << " results=" << lines << " mode=" << mode << "\n";
}

void cmd_align(Session& s) {
    const Config& c = s.cfg;
    const auto source = load_embeddings(c.require("paths.source_embeddings"));
    const auto target = load_embeddings(c.require("paths.target_embeddings"));
    const Lexicon seed = load_lexicon(c.require("paths.lexicon"));
    Lexicon test;
    if (c.has("paths.test_lexicon")) test = load_lexicon(c.raw("paths.test_lexicon"));
    auto result = iterative_procrustes(source, target, seed, c.get_size("align.iters"),
                                       parse_induction_method(c.require("align.method")), c.get_size("align.csls_k"),
                                       c.has("paths.test_lexicon") ? &test : nullptr);
    result.map.source_lang = c.raw("synth.source_lang");
    result.map.target_lang = c.raw("synth.target_lang");
    const std::string& output = c.require("paths.output");
    save_alignment(result.map, output);
    echo_config(s, output);
    std::string log;
    for (std::size_t i = 0; i < result.round_accuracy.size(); ++i)
        log += "round=" + std::to_string(i + 1) + " accuracy=" + fixed4(result.round_accuracy[i]) + "\n";
    log += "best_round=" + std::to_string(result.best_round) + " seed_pairs=" + std::to_string(result.seed_pairs_used) +
           " dropped=" + std::to_string(result.seed_pairs_dropped);
    if (!result.round_accuracy.empty())
        log += " accuracy=" + fixed4(result.round_accuracy[result.best_round - 1]);
    log += "\n";
    write_file(output + ".log", log);
    s.out << log;
}

void cmd_train(Session& s) {
    const Config& c = s.cfg;
    RankerConfig rc = ranker_config(c);
    TrainConfig tc;
    tc.seed = c.get_u64("experiment.seed");
    tc.lr = c.get_double("train.lr");
    tc.epochs = c.get_size("train.epochs");
    tc.batch_size = c.get_size("train.batch_size");
    tc.channel = parse_feature_channel(c.require("train.feature_channel"));

    const Corpus docs = load_documents(c.require("paths.docs"));
    const QuerySet train_q = load_queries(c.require("paths.train_queries"));
    const QuerySet dev_q = load_queries(c.require("paths.dev_queries"));
    const QuerySet all_q = merge_queries({&train_q, &dev_q});
    const RelevanceJudgments qrels = load_qrels(c.require("paths.qrels"));
    const Run run = load_run(c.require("paths.run"));
    const EmbeddingPair emb = load_embedding_pair(c);

    const RerankContext ctx(docs, all_q, emb.source, emb.target);
    TrainData data{&ctx, &run, &run, &qrels, query_ids(train_q), query_ids(dev_q)};
    std::string log;
    const Checkpoint ckpt = train(rc, tc, data, [&](const EpochLog& e) {
        const std::string line = "epoch=" + std::to_string(e.epoch) + " loss=" + fixed4(e.mean_loss) +
                                 " dev_map=" + fixed4(e.dev_map) + "\n";
        log += line;
        s.out << line << std::flush;
    });
    const std::string& output = c.require("paths.checkpoint");
    auto j = ckpt.to_json();
    j["experiment_config"] = c.to_json();
    write_file(output, dump_json(j) + "\n");
    log += "best_epoch=" + std::to_string(ckpt.best_epoch) +
           " dev_map=" + fixed4(ckpt.history[ckpt.best_epoch - 1].dev_map) + "\n";
    write_file(output + ".log", log);
    echo_config(s, output);
    s.out << log.substr(log.rfind("best_epoch"));
}

void write_reranked(Session& s, const Run& run, const std::string& tag) {
    const std::string& output = s.cfg.require("paths.output");
    save_run(run, tag, output);
    echo_config(s, output);
    s.out << "reranked queries=" << run.size() << " tag=" << tag << "\n";
}

struct RerankInputs {
    Corpus docs;
    QuerySet queries;
    Run run;
    EmbeddingPair emb;
};

RerankInputs rerank_inputs(const Config& c) {
    return {load_documents(c.require("paths.docs")), load_queries(c.require("paths.queries")),
            load_run(c.require("paths.run")), load_embedding_pair(c)};
}

void cmd_rerank(Session& s) {
    const Checkpoint ckpt = Checkpoint::load(s.cfg.require("paths.checkpoint"));
    const RerankInputs in = rerank_inputs(s.cfg);
    const RerankContext ctx(in.docs, in.queries, in.emb.source, in.emb.target);
    const auto only = query_ids(in.queries);
    write_reranked(s, rerank(ckpt, ctx, in.run, &only), "rerank-" + to_string(ckpt.config.arch));
}

void cmd_ensemble(Session& s) {
    std::vector<Checkpoint> ckpts;
    for (const auto& path : s.cfg.get_list("paths.checkpoints")) ckpts.push_back(Checkpoint::load(path));
    if (ckpts.empty()) throw UsageError("missing required setting paths.checkpoints");
    const RerankInputs in = rerank_inputs(s.cfg);
    const RerankContext ctx(in.docs, in.queries, in.emb.source, in.emb.target);
    const auto only = query_ids(in.queries);
    write_reranked(s, rerank_ensemble(ckpts, ctx, in.run, &only), "ensemble");
}

void cmd_eval(Session& s) {
    const Config& c = s.cfg;
    const Run run = load_run(c.require("paths.run"));
    const RelevanceJudgments qrels = load_qrels(c.require("paths.qrels"));
    const std::size_t n_docs = load_documents(c.require("paths.docs")).size();
    std::set<std::string> only;
    if (c.has("paths.queries")) only = query_ids(load_queries(c.raw("paths.queries")));
    const auto* restrict = c.has("paths.queries") ? &only : nullptr;

    EvalConfig ec;
    ec.cutoff_k = c.get_size("eval.k");
    ec.beta = c.get_double("eval.beta");
    ec.validate();
    const std::string cutoff = c.require("eval.cutoff");
    if (cutoff == "fixed") {
        ec.aqwv_threshold = c.get_double("eval.threshold");
    } else if (cutoff == "dev") {
        if (!c.has("paths.dev_queries"))
            throw UsageError("eval.cutoff = dev needs paths.dev_queries (or set eval.cutoff = in-split)");
        const auto dev = query_ids(load_queries(c.raw("paths.dev_queries")));
        const Run cutoff_run = c.has("paths.cutoff_run") ? load_run(c.raw("paths.cutoff_run")) : run;
        ec.aqwv_threshold = find_best_cutoff(cutoff_run, qrels, n_docs, ec.beta, &dev);
    } else if (cutoff != "in-split") {
        throw UsageError("eval.cutoff must be dev, in-split or fixed");
    }
    const EvalReport report = evaluate(run, qrels, n_docs, ec, restrict);
    s.out << format_report_table(report);
    if (c.has("paths.output")) {
        write_file(c.raw("paths.output"), format_report_jsonl(report));
        echo_config(s, c.raw("paths.output"));
    }
}

struct CommandSpec {
    const char* name;
    const char* help;
    std::function<void(Session&)> run;
};

const std::vector<CommandSpec>& commands() {
    static const std::vector<CommandSpec> list{
        {"gen-synth", "generate a synthetic cipher-language CLIR dataset", cmd_gen_synth},
        {"index", "build an inverted index over one document side", cmd_index},
        {"search", "first-stage retrieval (ql, dbqt or psq) to a TREC run", cmd_search},
        {"align", "align target embeddings to the source space", cmd_align},
        {"train", "train a reranker and write a checkpoint", cmd_train},
        {"rerank", "rerank a first-stage run with a checkpoint", cmd_rerank},
        {"eval", "MAP, P@k, NDCG@k and AQWV of a run", cmd_eval},
        {"ensemble", "rerank with the mean score of several checkpoints", cmd_ensemble},
    };
    return list;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-lingual retrieval and neural reranking toolkit", "clir"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_file;
    std::vector<std::string> assignments;
    std::string seed, output, mode, side;
    app.add_option("-c,--config", config_file, "flat 'section.key = value' config file");
    app.add_option("--set", assignments, "override a setting: section.key=value (repeatable)");
    app.add_option("--seed", seed, "shorthand for experiment.seed");
    app.add_option("-o,--output", output, "shorthand for paths.output");
    app.add_option("--mode", mode, "shorthand for retrieval.mode");
    app.add_option("--side", side, "shorthand for retrieval.side");
    for (auto* opt : app.get_options())
        if (opt->get_name() != "--set") opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::map<std::string, std::string> flag_values;
    std::vector<std::pair<std::string, CLI::Option*>> key_flags;
    for (const auto& key : config_schema())
        key_flags.emplace_back(key.name, app.add_option("--" + key.name, flag_values[key.name], key.help)
                                             ->group("Settings")
                                             ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast));

    std::map<std::string, CLI::App*> subs;
    for (const auto& cmd : commands()) subs[cmd.name] = app.add_subcommand(cmd.name, cmd.help);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "clir: error: " << one_line(e.what()) << "\n";
        return 1;
    }

    try {
        const CommandSpec* chosen = nullptr;
        for (const auto& cmd : commands())
            if (subs[cmd.name]->parsed()) chosen = &cmd;
        Session session{chosen->name, config_file.empty() ? Config() : Config::load(config_file), out};
        Config& cfg = session.cfg;
        for (const auto& [key, opt] : key_flags)
            if (opt->count() > 0) cfg.set(key, flag_values[key]);
        if (!seed.empty()) cfg.set("experiment.seed", seed);
        if (!output.empty()) cfg.set("paths.output", output);
        if (!mode.empty()) cfg.set("retrieval.mode", mode);
        if (!side.empty()) cfg.set("retrieval.side", side);
        for (const auto& a : assignments) cfg.set_assignment(a);
        (void)cfg.get_u64("experiment.seed");
        chosen->run(session);
        return 0;
    } catch (const UsageError& e) {
        err << "clir: error: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const DataError& e) {
        err << "clir: error: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const NumericError& e) {
        err << "clir: error: " << one_line(e.what()) << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "clir: error: " << one_line(e.what()) << "\n";
        return 2;
    }
}

}  // namespace clir
