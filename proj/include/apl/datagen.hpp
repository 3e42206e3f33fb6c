#pragma once

// Synthetic anchor-function data: single and two-anchor composite functions,
// per-pair mapping assignments, the modulo train/test placement rule, and
// dataset generation with a fixed-width binary file format.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "apl/rng.hpp"

namespace apl {

using Token = std::uint16_t;

inline constexpr int kItemMin = 20;
inline constexpr int kItemMax = 99;
inline constexpr int kDefaultVocab = 120;
inline constexpr int kDefaultSeqLen = 9;

/// Bad anchors, unclassified pairs, inconsistent mapping requests.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A held-out pair was requested where a training target is needed.
class HeldOutPairError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

struct AnchorPair {
    int first = 0;
    int second = 0;

    AnchorPair reversed() const { return {second, first}; }
    std::string to_string() const;
    auto operator<=>(const AnchorPair&) const = default;
};

/// Anchor token -> additive offset, g(x; a) = x + offset(a).
class AnchorFunctionTable {
public:
    AnchorFunctionTable() = default;
    explicit AnchorFunctionTable(std::map<int, int> offsets) : offsets_(std::move(offsets)) {}

    /// {1: +5, 2: +1, 3: -2, 4: -8}
    static AnchorFunctionTable standard();

    bool contains(int anchor) const { return offsets_.count(anchor) != 0; }
    int offset(int anchor) const;
    std::vector<int> anchors() const;
    const std::map<int, int>& entries() const { return offsets_; }

private:
    std::map<int, int> offsets_;
};

int single_anchor_apply(int x, int anchor, const AnchorFunctionTable& table);
int composite_apply(int x, int first, int second, const AnchorFunctionTable& table);

struct PairMapping {
    enum class Kind { Inferential, Offset, HeldOut };
    Kind kind = Kind::Inferential;
    int offset = 0;  // only for Kind::Offset

    static PairMapping inferential() { return {Kind::Inferential, 0}; }
    static PairMapping fixed_offset(int c) { return {Kind::Offset, c}; }
    static PairMapping held_out() { return {Kind::HeldOut, 0}; }
    bool operator==(const PairMapping&) const = default;
};

/// How a held-out pair is scored at evaluation time.
struct Designation {
    enum class Kind { Inferential, Symmetric, Offset };
    Kind kind = Kind::Inferential;
    int offset = 0;

    static Designation inferential() { return {Kind::Inferential, 0}; }
    static Designation symmetric() { return {Kind::Symmetric, 0}; }
    static Designation fixed_offset(int c) { return {Kind::Offset, c}; }
    std::string to_string() const;
    static Designation parse(const std::string& text);
    bool operator==(const Designation&) const = default;
};

class MappingSpec {
public:
    /// Every ordered pair over the table's anchors starts out Inferential.
    explicit MappingSpec(AnchorFunctionTable table = AnchorFunctionTable::standard());

    /// 14 inferential pairs, (3,4) -> x-6, (4,3) held out.
    static MappingSpec standard();

    void set(AnchorPair pair, PairMapping mapping);
    const PairMapping& mapping(AnchorPair pair) const;
    const AnchorFunctionTable& table() const { return table_; }
    const std::map<AnchorPair, PairMapping>& entries() const { return pairs_; }

    std::vector<AnchorPair> trainable_pairs() const;
    std::vector<AnchorPair> held_out_pairs() const;
    bool is_anchor(int token) const { return table_.contains(token); }

private:
    AnchorFunctionTable table_;
    std::map<AnchorPair, PairMapping> pairs_;
};

/// Target of `x` under the pair's assigned mapping. Held-out pairs need an
/// evaluation designation; without one a HeldOutPairError is raised.
int designated_target(int x, AnchorPair pair, const MappingSpec& spec,
                      const std::optional<Designation>& eval_designation = std::nullopt);

/// Target of `x` under an explicit designation. Symmetric resolves to the
/// reversed pair's assigned mapping.
int apply_designation(int x, AnchorPair pair, const Designation& designation, const MappingSpec& spec);

struct SplitRule {
    int modulus = kDefaultSeqLen - 2;

    static SplitRule for_seq_len(int seq_len);
};

enum class Split { Train, Test };
enum class SlotCheck { Train, TestKeySlot };

const char* to_string(Split split);

/// Train: mod(x, m) != pos. TestKeySlot: mod(x, m) == pos. Positions are 0-indexed.
bool split_check(int x, int pos, const SplitRule& rule, SlotCheck check);

/// Item values in [kItemMin, kItemMax] admissible at `pos`.
std::vector<int> admissible_items(int pos, const SplitRule& rule, SlotCheck check);

struct Sample {
    std::vector<Token> tokens;
    int key_pos = 0;
    AnchorPair pair;
    Token target = 0;

    int key() const { return tokens.at(static_cast<std::size_t>(key_pos)); }
    bool operator==(const Sample&) const = default;
};

/// One sequence: key item at key_pos, the anchor pair right after it, noise elsewhere.
/// Training samples of held-out pairs are refused. Test samples constrain only the
/// key slot; noise items always follow the training placement rule.
Sample generate_sample(Rng& rng, AnchorPair pair, const MappingSpec& spec, const SplitRule& rule,
                       Split split, int seq_len = kDefaultSeqLen,
                       const std::optional<Designation>& eval_designation = std::nullopt);

/// Checks the placement and target invariants; returns an empty string when valid.
std::string validate_sample(const Sample& sample, const MappingSpec& spec, const SplitRule& rule,
                            Split split, const std::optional<Designation>& eval_designation = std::nullopt);

struct DatasetConfig {
    std::size_t count = 900000;
    int seq_len = kDefaultSeqLen;
    std::uint64_t seed = 0;
    Split split = Split::Train;
};

struct Dataset {
    std::vector<Sample> samples;
    Split split = Split::Train;
    std::uint64_t seed = 0;
    int seq_len = kDefaultSeqLen;
    MappingSpec spec;
};

/// Samples cycle through the trainable pairs so every pair gets count/P (+1) samples;
/// sample i draws from its own seed so the result does not depend on generation order.
Dataset build_dataset(const DatasetConfig& config, const MappingSpec& spec);

inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
/// Records are validated against `spec` and `split`; violations raise IoError.
Dataset load_dataset(const std::filesystem::path& path, const MappingSpec& spec, Split split);

}  // namespace apl
