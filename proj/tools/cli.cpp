#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "textcam/cam.hpp"
#include "textcam/channel_semantics.hpp"
#include "textcam/concept_eval.hpp"
#include "textcam/grouping.hpp"
#include "textcam/png_writer.hpp"
#include "textcam/sparse_select.hpp"
#include "textcam/synth_clevr.hpp"
#include "textcam/tensor_io.hpp"

namespace textcam::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Index = Eigen::Index;

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kMissingFile:
      return kExitMissingInput;
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kLengthMismatch:
    case ErrorCode::kIndexOutOfRange:
      return kExitShapeMismatch;
    case ErrorCode::kIoError:
    case ErrorCode::kManifestParseError:
    case ErrorCode::kNonFiniteValue:
      return kExitIo;
    case ErrorCode::kInvalidArgument:
      return kExitUsage;
    default:
      return kExitInvariant;
  }
}

namespace {

// ---- bundle helpers --------------------------------------------------------

const io::Tensor& tensor_with_role(const io::TensorBundle& bundle, io::Role role,
                                   const std::string& bundle_label,
                                   const std::string& preferred_name = {}) {
  if (!preferred_name.empty() && bundle.contains(preferred_name)) {
    const io::Tensor& t = bundle.at(preferred_name);
    if (t.role == role) return t;
  }
  const auto names = bundle.names_with_role(role);
  if (names.empty()) {
    throw Error(ErrorCode::kMissingFile, bundle_label + " has no tensor with role '" +
                                             std::string(io::role_name(role)) + "'");
  }
  if (names.size() > 1) {
    throw Error(ErrorCode::kInvalidArgument,
                bundle_label + " has several '" + std::string(io::role_name(role)) +
                    "' tensors" + (preferred_name.empty() ? "" : " and none named '" +
                                                                    preferred_name + "'"));
  }
  return bundle.at(names.front());
}

const io::Tensor* optional_role(const io::TensorBundle& bundle, io::Role role,
                                const std::string& preferred_name = {}) {
  if (!preferred_name.empty() && bundle.contains(preferred_name) &&
      bundle.at(preferred_name).role == role) {
    return &bundle.at(preferred_name);
  }
  const auto names = bundle.names_with_role(role);
  return names.size() == 1 ? &bundle.at(names.front()) : nullptr;
}

RowMatrix to_matrix(const io::Tensor& t, const std::string& what) {
  if (t.rank() != 2) {
    throw Error(ErrorCode::kShapeMismatch, what + " must be a rank-2 tensor");
  }
  RowMatrix m(t.dim(0), t.dim(1));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = t.data[static_cast<std::size_t>(i)];
  return m;
}

Vector to_vector(const io::Tensor& t, const std::string& what) {
  if (t.rank() != 1) throw Error(ErrorCode::kShapeMismatch, what + " must be a rank-1 tensor");
  Vector v(static_cast<Index>(t.data.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = t.data[static_cast<std::size_t>(i)];
  return v;
}

io::Tensor from_matrix(const RowMatrix& m, io::Role role) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return io::Tensor({m.rows(), m.cols()}, std::move(data), role);
}

io::Tensor from_labels(const std::vector<int>& labels) {
  std::vector<float> data(labels.begin(), labels.end());
  return io::Tensor({static_cast<std::int64_t>(labels.size())}, std::move(data), io::Role::kLabels);
}

std::vector<int> to_labels(const io::Tensor& t) {
  if (t.rank() != 1) throw Error(ErrorCode::kShapeMismatch, "labels must be a rank-1 tensor");
  std::vector<int> out;
  out.reserve(t.data.size());
  for (float v : t.data) {
    if (v < 0.0f || v != std::floor(v)) {
      throw Error(ErrorCode::kInvariantViolation, "labels must be nonnegative integers");
    }
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  io::write_file_atomic(path, doc.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::kIoError, "cannot create output directory " + dir.string());
  }
}

std::string slug(const std::string& phrase) {
  std::string out;
  bool pending_sep = false;
  for (unsigned char ch : phrase) {
    if (std::isalnum(ch)) {
      if (pending_sep && !out.empty()) out.push_back('_');
      out.push_back(static_cast<char>(std::tolower(ch)));
      pending_sep = false;
    } else {
      pending_sep = true;
    }
    if (out.size() >= 40) break;
  }
  return out.empty() ? "phrase" : out;
}

// ---- shared explain inputs -------------------------------------------------

struct SolverFlags {
  std::optional<double> alpha;
  double beta = 0.1;
  double rho = 1.0;
  double tol = 1e-6;
  int max_iter = 10000;
  int topk = 5;
  bool no_polish = false;

  sparse::Config config() const {
    sparse::Config cfg;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.rho = rho;
    cfg.tol = tol;
    cfg.max_iter = max_iter;
    cfg.top_k = topk;
    cfg.polish = !no_polish;
    return cfg;
  }
};

struct ExplainFlags {
  std::string image;
  std::string table;
  std::string vocab;
  std::string phrases;
  std::string out;
  std::string weights = "auto";
  std::optional<int> class_index;
  int height = 224;
  int width = 224;
  std::string colormap = "gray";
  std::uint64_t seed = 0;
  SolverFlags solver;
};

struct ExplainInputs {
  cam::ActivationStack stack;
  cam::ChannelWeights weights;
  semantics::ChannelSemanticsTable table;
  io::TensorBundle table_bundle;
  sparse::VocabularyBank bank;
  Vector activation;
};

cam::Colormap parse_colormap(const std::string& name) {
  if (name == "gray") return cam::Colormap::kGray;
  if (name == "jet") return cam::Colormap::kJet;
  throw Error(ErrorCode::kInvalidArgument, "unknown colormap '" + name + "'");
}

int resolve_class(const ExplainFlags& flags, const io::TensorBundle& bundle) {
  if (flags.class_index) return *flags.class_index;
  auto it = bundle.metadata.find("class_index");
  if (it == bundle.metadata.end()) return 0;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvariantViolation, "metadata class_index is not an integer");
  }
}

cam::ChannelWeights resolve_weights(const ExplainFlags& flags, const io::TensorBundle& bundle,
                                    const cam::ActivationStack& stack, int cls) {
  std::string mode = flags.weights;
  if (mode == "auto") {
    if (optional_role(bundle, io::Role::kChannelWeights)) {
      mode = "channel";
    } else if (optional_role(bundle, io::Role::kHeadWeights)) {
      mode = "head";
    } else if (optional_role(bundle, io::Role::kGradient)) {
      mode = "gradcam";
    } else {
      throw Error(ErrorCode::kMissingFile,
                  "image bundle has no channel_weights, head_weights or gradient tensor");
    }
  }
  cam::ChannelWeights w;
  if (mode == "head") {
    w = cam::weights_from_head(
        to_matrix(tensor_with_role(bundle, io::Role::kHeadWeights, "image bundle"), "head weights"),
        cls);
  } else if (mode == "gradcam" || mode == "layercam") {
    const auto grads = cam::ActivationStack::from_tensor(
        tensor_with_role(bundle, io::Role::kGradient, "image bundle"));
    w = cam::weights_from_gradients(
        grads, stack, mode == "gradcam" ? cam::GradientMode::kGradCam : cam::GradientMode::kLayerCam,
        cls);
  } else if (mode == "channel") {
    w.w = to_vector(tensor_with_role(bundle, io::Role::kChannelWeights, "image bundle"),
                    "channel weights");
    w.class_index = cls;
    w.source = cam::WeightSource::kExternal;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown weight source '" + mode + "'");
  }
  if (w.w.size() != stack.channels()) {
    throw Error(ErrorCode::kShapeMismatch, "channel weights have length " +
                                               std::to_string(w.w.size()) + ", activations have " +
                                               std::to_string(stack.channels()) + " channels");
  }
  return w;
}

ExplainInputs load_explain_inputs(const ExplainFlags& flags) {
  const io::TensorBundle image = io::read_bundle(flags.image);
  auto stack = cam::ActivationStack::from_tensor(
      tensor_with_role(image, io::Role::kActivation, "image bundle", "activation"));
  const int cls = resolve_class(flags, image);
  auto weights = resolve_weights(flags, image, stack, cls);

  io::TensorBundle table_bundle = io::read_bundle(flags.table);
  auto table = semantics::table_from_bundle(table_bundle);
  if (table.channels() != stack.channels()) {
    throw Error(ErrorCode::kShapeMismatch,
                "table has " + std::to_string(table.channels()) + " channels, activations have " +
                    std::to_string(stack.channels()));
  }
  const fs::path phrase_file =
      flags.phrases.empty() ? fs::path(flags.vocab) / "phrases.txt" : fs::path(flags.phrases);
  auto bank = sparse::VocabularyBank::load(flags.vocab, phrase_file);
  if (bank.dim() != table.embedding_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "vocabulary dimension " + std::to_string(bank.dim()) +
                                               " differs from table dimension " +
                                               std::to_string(table.embedding_dim()));
  }
  Vector a = cam::gap(stack);
  return {std::move(stack), std::move(weights), std::move(table), std::move(table_bundle),
          std::move(bank), std::move(a)};
}

json table_config(const io::TensorBundle& table_bundle) {
  json out = json::object();
  for (const char* key : {"m_extremes", "shrinkage"}) {
    auto it = table_bundle.metadata.find(key);
    if (it == table_bundle.metadata.end()) continue;
    try {
      out[key] = std::stod(it->second);
    } catch (const std::exception&) {
      out[key] = it->second;
    }
  }
  return out;
}

json explain_config(const ExplainFlags& flags, const ExplainInputs& in,
                    const sparse::Solution& sol) {
  json cfg;
  cfg["alpha"] = sol.alpha;
  cfg["alpha_source"] = flags.solver.alpha ? "flag" : "default";
  cfg["beta"] = flags.solver.beta;
  cfg["rho"] = flags.solver.rho;
  cfg["rho_effective"] = sol.rho;
  cfg["tol"] = flags.solver.tol;
  cfg["max_iter"] = flags.solver.max_iter;
  cfg["polish"] = !flags.solver.no_polish;
  cfg["topk"] = flags.solver.topk;
  cfg["weights"] = cam::weight_source_name(in.weights.source);
  cfg["class_index"] = in.weights.class_index;
  cfg["render_height"] = flags.height;
  cfg["render_width"] = flags.width;
  cfg["colormap"] = flags.colormap;
  cfg["seed"] = flags.seed;
  cfg["table"] = table_config(in.table_bundle);
  return cfg;
}

json solution_json(const sparse::Solution& sol, const Vector& t) {
  json s;
  s["converged"] = sol.converged;
  s["iterations"] = sol.iterations;
  s["polished"] = sol.polished;
  s["objective"] = sol.objective;
  s["primal_residual"] = sol.primal_residual;
  s["dual_residual"] = sol.dual_residual;
  s["min_eigen_estimate"] = sol.min_eigen_estimate;
  Index nonzero = 0;
  for (Index i = 0; i < sol.omega.size(); ++i) nonzero += sol.omega[i] > sparse::kPositiveThreshold;
  s["nonzero"] = nonzero;
  s["omega_sum"] = sol.omega.sum();
  s["omega_max"] = sol.omega.size() ? sol.omega.maxCoeff() : 0.0;
  s["semantic_norm"] = t.norm();
  s["omega"] = std::vector<double>(sol.omega.data(), sol.omega.data() + sol.omega.size());
  return s;
}

json phrases_json(const std::vector<sparse::RankedPhrase>& ranked) {
  json list = json::array();
  for (const auto& r : ranked) {
    list.push_back({{"phrase", r.phrase}, {"index", r.index}, {"weight", r.weight}});
  }
  return list;
}

void add_explain_options(CLI::App* cmd, ExplainFlags& f) {
  cmd->add_option("image", f.image, "Image bundle (activation [d,H,W] plus weights)")->required();
  cmd->add_option("--table", f.table, "Channel semantics table bundle")->required();
  cmd->add_option("--vocab", f.vocab, "Vocabulary bundle (clip_text_embedding [D,N])")->required();
  cmd->add_option("--phrases", f.phrases, "Phrase file, one per line (default <vocab>/phrases.txt)");
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--weights", f.weights, "Channel weight source")
      ->check(CLI::IsMember({"auto", "head", "gradcam", "layercam", "channel"}));
  cmd->add_option("--class", f.class_index, "Class to explain (default: metadata class_index, else 0)");
  cmd->add_option("--height", f.height, "Rendered heatmap height")->check(CLI::PositiveNumber);
  cmd->add_option("--width", f.width, "Rendered heatmap width")->check(CLI::PositiveNumber);
  cmd->add_option("--colormap", f.colormap, "gray or jet")->check(CLI::IsMember({"gray", "jet"}));
  cmd->add_option("--seed", f.seed, "Seed (echoed; the pipeline is deterministic)");
  cmd->add_option("--alpha", f.solver.alpha, "L1 weight (default 0.1 * max(E'T))");
  cmd->add_option("--beta", f.solver.beta, "Redundancy penalty");
  cmd->add_option("--rho", f.solver.rho, "ADMM penalty");
  cmd->add_option("--tol", f.solver.tol, "ADMM tolerance");
  cmd->add_option("--max-iter", f.solver.max_iter, "ADMM iteration cap");
  cmd->add_option("--topk", f.solver.topk, "Phrases to report (and groups for `group`)");
  cmd->add_flag("--no-polish", f.solver.no_polish, "Skip the support re-solve after ADMM");
}

// ---- subcommands -----------------------------------------------------------

struct SemanticsFlags {
  std::string reference;
  std::string out;
  int m_extremes = 100;
  double shrinkage = 1e-3;
};

int cmd_channel_semantics(const SemanticsFlags& f, std::ostream& out) {
  const io::TensorBundle ref = io::read_bundle(f.reference);
  const io::Tensor& scores = tensor_with_role(ref, io::Role::kActivation, "reference bundle");
  const io::Tensor& emb = tensor_with_role(ref, io::Role::kClipImageEmbedding, "reference bundle");
  semantics::ReferenceSet set{to_matrix(emb, "image embeddings"),
                              to_matrix(scores, "channel scores")};
  const semantics::Config cfg{f.m_extremes, f.shrinkage};
  const auto table = semantics::build_table(set, cfg);
  io::write_bundle(semantics::table_to_bundle(table, cfg), f.out);
  const auto degenerate = std::count(table.degenerate.begin(), table.degenerate.end(), true);
  out << "channels: " << table.channels() << "\n"
      << "degenerate channels: " << degenerate << "\n";
  return kExitOk;
}

int cmd_explain(const ExplainFlags& f, std::ostream& out) {
  const auto colormap = parse_colormap(f.colormap);
  const ExplainInputs in = load_explain_inputs(f);
  const auto rep = semantics::semantic_representation(in.table, in.activation, in.weights);
  const sparse::Config scfg = f.solver.config();
  const auto sol = sparse::admm_solve(rep.t, in.bank, scfg);
  const auto ranked = sparse::top_k_phrases(sol, in.bank, f.solver.topk);
  const auto image = cam::render(cam::saliency(in.stack, in.weights), f.height, f.width, colormap);

  const fs::path dir(f.out);
  ensure_dir(dir);
  const json cfg = explain_config(f, in, sol);
  write_png(image, dir / "saliency.png");
  write_json(dir / "phrases.json", json{{"config", cfg}, {"phrases", phrases_json(ranked)}});
  write_json(dir / "solution.json", json{{"config", cfg}, {"solution", solution_json(sol, rep.t)}});

  for (const auto& r : ranked) out << r.weight << "\t" << r.phrase << "\n";
  if (!sol.converged) out << "warning: solver did not converge\n";
  return kExitOk;
}

struct GroupFlags {
  ExplainFlags explain;
  int max_sweeps = grouping::kDefaultMaxSweeps;
  bool inject_fault = false;
};

int cmd_group(const GroupFlags& g, std::ostream& out) {
  const ExplainFlags& f = g.explain;
  const auto colormap = parse_colormap(f.colormap);
  if (g.max_sweeps < 1) throw Error(ErrorCode::kInvalidArgument, "max-sweeps must be >= 1");
  const ExplainInputs in = load_explain_inputs(f);
  const auto rep = semantics::semantic_representation(in.table, in.activation, in.weights);
  const auto sol = sparse::admm_solve(rep.t, in.bank, f.solver.config());
  auto ranked = sparse::top_k_phrases(sol, in.bank, f.solver.topk);
  if (ranked.empty()) {
    throw Error(ErrorCode::kEmptySet, "no phrase has a positive weight; nothing to group");
  }
  if (static_cast<Index>(ranked.size()) > in.stack.channels()) {
    ranked.resize(static_cast<std::size_t>(in.stack.channels()));
  }
  const int k_count = static_cast<int>(ranked.size());

  grouping::Problem problem;
  problem.weighted_semantics = semantics::weighted_semantics(in.table, in.activation, in.weights);
  problem.centers.resize(k_count, in.bank.dim());
  for (int k = 0; k < k_count; ++k) {
    problem.centers.row(k) = in.bank.embeddings().col(ranked[static_cast<std::size_t>(k)].index).transpose();
  }
  const auto assignment = grouping::greedy_relocate(problem, g.max_sweeps);

  std::vector<cam::SaliencyMap> maps;
  for (int k = 0; k < k_count; ++k) {
    maps.push_back(grouping::group_saliency(in.stack, in.weights, assignment.group, k));
  }
  if (g.inject_fault) maps.front().values(0, 0) += 1.0 + maps.front().values.cwiseAbs().maxCoeff();

  // Scale for the sum check: the largest per-pixel sum of |w_j A_j|.
  const RowMatrix magnitude =
      (in.weights.w.cwiseAbs().transpose() * in.stack.maps().cwiseAbs());
  const double scale = std::max(magnitude.maxCoeff(), std::numeric_limits<double>::min());
  const auto full = cam::saliency(in.stack, in.weights);
  RowMatrix total = RowMatrix::Zero(full.values.rows(), full.values.cols());
  for (const auto& m : maps) total += m.values;
  const double max_error = (total - full.values).cwiseAbs().maxCoeff() / scale;
  if (!(max_error <= 1e-5)) {
    throw Error(ErrorCode::kInvariantViolation,
                "group maps do not sum to the full map (relative error " +
                    std::to_string(max_error) + ")");
  }

  const fs::path dir(f.out);
  ensure_dir(dir);
  json groups = json::array();
  json phrases = json::array();
  json files = json::array();
  for (int k = 0; k < k_count; ++k) {
    json members = json::array();
    for (std::size_t j = 0; j < assignment.group.size(); ++j) {
      if (assignment.group[j] == k) members.push_back(j);
    }
    groups.push_back(members);
    const auto& phrase = ranked[static_cast<std::size_t>(k)];
    phrases.push_back({{"phrase", phrase.phrase}, {"index", phrase.index}, {"weight", phrase.weight}});
    const std::string name = "group_" + std::to_string(k) + "_" + slug(phrase.phrase) + ".png";
    write_png(cam::render(maps[static_cast<std::size_t>(k)], f.height, f.width, colormap), dir / name);
    files.push_back(name);
  }
  json cfg = explain_config(f, in, sol);
  cfg["max_sweeps"] = g.max_sweeps;
  cfg["groups"] = k_count;
  json doc;
  doc["config"] = cfg;
  doc["groups"] = groups;
  doc["phrases"] = phrases;
  doc["images"] = files;
  doc["objective"] = assignment.objective;
  doc["sweeps"] = assignment.sweeps;
  doc["moves"] = assignment.moves;
  doc["converged"] = assignment.converged;
  doc["partition_relative_error"] = max_error;
  doc["solver_converged"] = sol.converged;
  write_json(dir / "groups.json", doc);

  for (int k = 0; k < k_count; ++k) {
    out << "group " << k << " (" << ranked[static_cast<std::size_t>(k)].phrase
        << "): " << groups[static_cast<std::size_t>(k)].size() << " channels\n";
  }
  out << "objective: " << assignment.objective << "\n";
  return kExitOk;
}

struct EvalFlags {
  std::string features;
  std::string table;
  std::string concepts;
  std::string concept_names;
  std::string class_names;
  std::string out;
  int ablate_topk = 0;
  int topk = 3;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  const io::TensorBundle bundle = io::read_bundle(f.features);
  const RowMatrix features =
      to_matrix(tensor_with_role(bundle, io::Role::kFeatureVector, "features bundle", "features"),
                "features");
  const std::vector<int> labels =
      to_labels(tensor_with_role(bundle, io::Role::kLabels, "features bundle", "labels"));
  const RowMatrix head =
      to_matrix(tensor_with_role(bundle, io::Role::kHeadWeights, "features bundle", "head"), "head");
  if (static_cast<Index>(labels.size()) != features.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "labels and feature rows differ in count");
  }
  if (head.cols() != features.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "head and features differ in channel count");
  }

  const auto table = semantics::table_from_bundle(io::read_bundle(f.table));
  if (table.channels() != features.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "table and features differ in channel count");
  }
  const fs::path names_file = f.concept_names.empty() ? fs::path(f.concepts) / "phrases.txt"
                                                      : fs::path(f.concept_names);
  const auto vocab = sparse::VocabularyBank::load(f.concepts, names_file);
  const eval::ConceptBank bank(vocab.phrases(), vocab.embeddings().transpose());
  if (bank.dim() != table.embedding_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "concept and table dimensions differ");
  }

  std::string class_list = f.class_names;
  if (class_list.empty()) {
    auto it = bundle.metadata.find("class_names");
    if (it == bundle.metadata.end()) {
      throw Error(ErrorCode::kMissingFile,
                  "class names are needed: pass --class-names or set metadata class_names");
    }
    class_list = it->second;
  }
  std::vector<Index> class_concept;
  for (const auto& name : split_list(class_list)) class_concept.push_back(bank.index_of(name));
  if (static_cast<Index>(class_concept.size()) != head.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "class names and head rows differ in count");
  }

  std::vector<Index> predicted, expected;
  json images = json::array();
  json per_concept = json::object();
  std::vector<int> counts(static_cast<std::size_t>(bank.size()), 0);
  for (Index i = 0; i < features.rows(); ++i) {
    const int cls = labels[static_cast<std::size_t>(i)];
    if (cls >= head.rows()) throw Error(ErrorCode::kIndexOutOfRange, "label exceeds head rows");
    const auto w = cam::weights_from_head(head, cls);
    const auto rep = semantics::semantic_representation(table, features.row(i).transpose(), w);
    const Vector scores = eval::concept_scores(rep.t, bank);
    const Index top = eval::top_concept(scores);
    json ranked = json::array();
    for (Index c : eval::top_k_concepts(scores, f.topk)) {
      ranked.push_back({{"concept", bank.concepts()[static_cast<std::size_t>(c)]}, {"score", scores[c]}});
    }
    images.push_back({{"index", i}, {"label", cls}, {"top", ranked}});
    predicted.push_back(top);
    expected.push_back(class_concept[static_cast<std::size_t>(cls)]);
    ++counts[static_cast<std::size_t>(top)];
  }
  for (Index c = 0; c < bank.size(); ++c) {
    per_concept[bank.concepts()[static_cast<std::size_t>(c)]] = counts[static_cast<std::size_t>(c)];
  }

  json cfg;
  cfg["ablate_topk"] = f.ablate_topk;
  cfg["topk"] = f.topk;
  cfg["seed"] = f.seed;
  cfg["class_names"] = split_list(class_list);
  json doc;
  doc["config"] = cfg;
  doc["samples"] = features.rows();
  doc["acc_txt"] = eval::txt_accuracy(predicted, expected);
  doc["top_concept_counts"] = per_concept;
  const double before = eval::classification_accuracy(eval::predict(head, features), labels);
  doc["accuracy"] = before;

  if (f.ablate_topk > 0) {
    if (!bundle.contains("probe") || bundle.at("probe").role != io::Role::kHeadWeights) {
      throw Error(ErrorCode::kMissingFile, "ablation needs a head_weights tensor named 'probe'");
    }
    const RowMatrix probe = to_matrix(bundle.at("probe"), "probe");
    if (probe.cols() != features.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "probe and features differ in channel count");
    }
    const auto mask = eval::color_dominant_mask(probe, f.ablate_topk);
    const double after = eval::classification_accuracy(
        eval::predict(head, eval::ablate_rows(features, mask)), labels);
    json ab;
    ab["k"] = f.ablate_topk;
    ab["mask_size"] = mask.size();
    ab["mask_fraction"] = static_cast<double>(mask.size()) / static_cast<double>(features.cols());
    ab["accuracy_before"] = before;
    ab["accuracy_after"] = after;
    ab["mask"] = mask;
    doc["ablation"] = ab;
  }
  doc["images"] = images;

  ensure_dir(f.out);
  write_json(fs::path(f.out) / "report.json", doc);
  out << "acc_txt: " << doc["acc_txt"].get<double>() << "\n";
  if (doc.contains("ablation")) {
    out << "accuracy: " << before << " -> " << doc["ablation"]["accuracy_after"].get<double>()
        << " (|S| = " << doc["ablation"]["mask_size"].get<std::size_t>() << ")\n";
  }
  return kExitOk;
}

struct SynthFlags {
  std::string out;
  std::uint64_t seed = 0;
  int n_per_class = 300;
  double bias = 0.9;
  double ridge = 1e-2;
  int grid = 7;
};

int cmd_synth_clevr(const SynthFlags& f, std::ostream& out) {
  synth::Config cfg;
  cfg.seed = f.seed;
  cfg.n_per_class = f.n_per_class;
  cfg.bias = f.bias;
  const auto train = synth::synth_clevr_features(cfg);
  const auto test = synth::synth_clevr_features(synth::balanced_split(cfg));
  const RowMatrix shape_head = eval::fit_ridge_head(train.features, train.shapes, 3, f.ridge);
  const RowMatrix color_head = eval::fit_ridge_head(train.features, train.colors, 3, f.ridge);
  const fs::path root(f.out);
  ensure_dir(root);

  const auto common_metadata = [&](io::TensorBundle& b) {
    b.metadata["generator"] = "synth-clevr";
    b.metadata["seed"] = std::to_string(f.seed);
    b.metadata["bias"] = json(f.bias).dump();
    b.metadata["n_per_class"] = std::to_string(f.n_per_class);
  };

  io::TensorBundle reference;
  common_metadata(reference);
  reference.tensors["channel_scores"] = from_matrix(train.features, io::Role::kActivation);
  reference.tensors["image_embeddings"] =
      from_matrix(train.image_embeddings, io::Role::kClipImageEmbedding);
  io::write_bundle(reference, root / "reference");

  const auto bank = synth::concept_bank(cfg.embedding_dim);
  io::TensorBundle concepts;
  common_metadata(concepts);
  concepts.tensors["text_embeddings"] =
      from_matrix(bank.embeddings().transpose(), io::Role::kClipTextEmbedding);
  io::write_bundle(concepts, root / "concepts");
  std::string phrase_text;
  for (const auto& c : bank.concepts()) phrase_text += c + "\n";
  io::write_file_atomic(root / "concepts" / "phrases.txt", phrase_text);

  const auto eval_bundle = [&](const std::vector<int>& labels, const RowMatrix& head,
                               const char* classes) {
    io::TensorBundle b;
    common_metadata(b);
    b.metadata["class_names"] = classes;
    b.tensors["features"] = from_matrix(test.features, io::Role::kFeatureVector);
    b.tensors["labels"] = from_labels(labels);
    b.tensors["head"] = from_matrix(head, io::Role::kHeadWeights);
    b.tensors["probe"] = from_matrix(color_head, io::Role::kHeadWeights);
    return b;
  };
  io::write_bundle(eval_bundle(test.shapes, shape_head, "cube,ball,cylinder"), root / "eval_shape");
  io::write_bundle(eval_bundle(test.colors, color_head, "red,blue,yellow"), root / "eval_color");

  // One test image as a spatial stack, explained through either head.
  const Vector z = test.features.row(0).transpose();
  const double center = 0.5 * (f.grid - 1);
  const RowMatrix maps = synth::blob_activation(z, f.grid, f.grid, center, center);
  const auto image_bundle = [&](const RowMatrix& head, int cls) {
    io::TensorBundle b;
    common_metadata(b);
    b.metadata["class_index"] = std::to_string(cls);
    b.tensors["activation"] = cam::ActivationStack(maps, f.grid, f.grid).to_tensor();
    b.tensors["head"] = from_matrix(head, io::Role::kHeadWeights);
    return b;
  };
  io::write_bundle(image_bundle(shape_head, test.shapes.front()), root / "image_shape");
  io::write_bundle(image_bundle(color_head, test.colors.front()), root / "image_color");

  out << "wrote reference, concepts, eval_shape, eval_color, image_shape, image_color to "
      << root.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-grounded class activation maps", "textcam"};
  app.require_subcommand(1);

  SemanticsFlags sem;
  auto* c_sem = app.add_subcommand("channel-semantics", "Build the channel direction table");
  c_sem->add_option("reference", sem.reference, "Reference bundle (activation [n,d], clip_image_embedding [n,D])")
      ->required();
  c_sem->add_option("--out", sem.out, "Output table bundle directory")->required();
  c_sem->add_option("--m-extremes", sem.m_extremes, "Images per extreme set");
  c_sem->add_option("--shrinkage", sem.shrinkage, "Relative scatter ridge");

  ExplainFlags ex;
  auto* c_ex = app.add_subcommand("explain", "Saliency map and sparse phrase explanation");
  add_explain_options(c_ex, ex);

  GroupFlags gr;
  auto* c_gr = app.add_subcommand("group", "Split the saliency map by selected phrases");
  add_explain_options(c_gr, gr.explain);
  c_gr->add_option("--max-sweeps", gr.max_sweeps, "Relocation sweep cap");
  c_gr->add_flag("--inject-partition-fault", gr.inject_fault)->group("");

  EvalFlags ev;
  auto* c_ev = app.add_subcommand("eval", "Textual accuracy and color-probe ablation");
  c_ev->add_option("features", ev.features, "Bundle with features, labels, head [, probe]")->required();
  c_ev->add_option("--table", ev.table, "Channel semantics table bundle")->required();
  c_ev->add_option("--concepts", ev.concepts, "Concept bundle (clip_text_embedding [D,K])")->required();
  c_ev->add_option("--concept-names", ev.concept_names, "Concept names file (default <concepts>/phrases.txt)");
  c_ev->add_option("--class-names", ev.class_names, "Comma-separated concept per class (default: metadata)");
  c_ev->add_option("--ablate-topk", ev.ablate_topk, "Probe channels per row to ablate (0 = skip)");
  c_ev->add_option("--topk", ev.topk, "Concepts listed per image")->check(CLI::PositiveNumber);
  c_ev->add_option("--seed", ev.seed, "Seed (echoed; evaluation is deterministic)");
  c_ev->add_option("--out", ev.out, "Output directory")->required();

  SynthFlags sy;
  auto* c_sy = app.add_subcommand("synth-clevr", "Write a synthetic biased shape/color corpus");
  c_sy->add_option("--out", sy.out, "Output directory")->required();
  c_sy->add_option("--seed", sy.seed, "Generator seed");
  c_sy->add_option("--n-per-class", sy.n_per_class, "Images per shape")->check(CLI::PositiveNumber);
  c_sy->add_option("--bias", sy.bias, "Probability of the dominant color")->check(CLI::Range(0.0, 1.0));
  c_sy->add_option("--ridge", sy.ridge, "Ridge for the linear heads");
  c_sy->add_option("--grid", sy.grid, "Spatial size of the image bundles")->check(CLI::PositiveNumber);

  std::vector<std::string> argv_store{"textcam"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::RequiredError& e) {
    err << "textcam: " << e.what() << "\n";
    // A missing subcommand is a usage error; a missing input of a subcommand is not.
    const bool in_subcommand = c_sem->parsed() || c_ex->parsed() || c_gr->parsed() ||
                               c_ev->parsed() || c_sy->parsed();
    return in_subcommand ? kExitMissingInput : kExitUsage;
  } catch (const CLI::ParseError& e) {
    err << "textcam: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (c_sem->parsed()) return cmd_channel_semantics(sem, out);
    if (c_ex->parsed()) return cmd_explain(ex, out);
    if (c_gr->parsed()) return cmd_group(gr, out);
    if (c_ev->parsed()) return cmd_eval(ev, out);
    if (c_sy->parsed()) return cmd_synth_clevr(sy, out);
  } catch (const Error& e) {
    err << "textcam: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "textcam: internal error: " << e.what() << "\n";
    return kExitInvariant;
  }
  return kExitUsage;
}

}  // namespace textcam::cli
