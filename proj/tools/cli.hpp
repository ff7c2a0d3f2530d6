#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <contextclip/data.hpp>
#include <contextclip/encoders.hpp>
#include <contextclip/trainer.hpp>

namespace contextclip::cli {

enum class Subcommand { gen_data, train, fine_tune, grad_check, eval_zeroshot, eval_retrieve, project, compare };

std::string_view subcommand_name(Subcommand kind) noexcept;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Rejected command line; the message is meant for the user.
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Command {
    Subcommand kind = Subcommand::train;
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::filesystem::path> corpus;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<double> alpha;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> k;
};

// Everything a subcommand needs. A single seed drives corpus generation,
// parameter initialization and batch shuffling.
struct Settings {
    std::uint64_t seed = 7;
    CorpusSpec corpus;
    ModelDims dims;
    TrainConfig train;
    double train_fraction = 0.8;
    std::size_t k = 5;
    std::size_t grad_pairs = 4;
    std::size_t grad_dim = 8;
    double grad_step = 1e-5;
    bool affinity_report = false;
    std::vector<int> query;  // eval-retrieve ranks the corpus for this caption when non-empty
    std::filesystem::path out = "contextclip_out";
};

// Defaults, with the seed copied into every seeded component.
Settings default_settings();

// Throws ConfigError on an unknown key or a malformed value.
void apply_setting(Settings& settings, std::string_view key, std::string_view value);

// Flat "key = value" lines; blank lines and lines starting with '#' are skipped.
void read_settings(std::istream& is, Settings& settings);

// Every key in the order read_settings accepts them, one per line.
void write_settings(std::ostream& os, const Settings& settings);

// Defaults, then the config file, then the command-line flags.
Settings resolve_settings(const Command& cmd);

std::string usage();

// Throws UsageError for an empty list, an unknown subcommand or flag, or a
// malformed flag value. The list excludes the program name.
Command parse_args(std::span<const std::string> args);

// Runs the command, writing results under the output directory and a short
// summary to `out`; failures are reported on `err` and mapped to exit codes.
int dispatch(const Command& cmd, std::ostream& out, std::ostream& err);

// parse_args + dispatch with usage errors reported on `err`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace contextclip::cli
