#include "apl/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "apl/binary_io.hpp"

namespace apl {

std::string AnchorPair::to_string() const {
    return "(" + std::to_string(first) + "," + std::to_string(second) + ")";
}

AnchorFunctionTable AnchorFunctionTable::standard() {
    return AnchorFunctionTable({{1, 5}, {2, 1}, {3, -2}, {4, -8}});
}

int AnchorFunctionTable::offset(int anchor) const {
    auto it = offsets_.find(anchor);
    if (it == offsets_.end()) {
        throw ConfigError("unknown anchor token " + std::to_string(anchor));
    }
    return it->second;
}

std::vector<int> AnchorFunctionTable::anchors() const {
    std::vector<int> out;
    for (const auto& [a, _] : offsets_) {
        out.push_back(a);
    }
    return out;
}

int single_anchor_apply(int x, int anchor, const AnchorFunctionTable& table) {
    return x + table.offset(anchor);
}

int composite_apply(int x, int first, int second, const AnchorFunctionTable& table) {
    return single_anchor_apply(single_anchor_apply(x, first, table), second, table);
}

std::string Designation::to_string() const {
    switch (kind) {
        case Kind::Inferential: return "inferential";
        case Kind::Symmetric: return "symmetric";
        case Kind::Offset: return "offset" + std::string(offset >= 0 ? "+" : "") + std::to_string(offset);
    }
    return "?";
}

Designation Designation::parse(const std::string& text) {
    if (text == "inferential") return inferential();
    if (text == "symmetric") return symmetric();
    if (text.rfind("offset", 0) == 0 && text.size() > 6) {
        try {
            std::size_t used = 0;
            int c = std::stoi(text.substr(6), &used);
            if (used == text.size() - 6) return fixed_offset(c);
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("unknown designation '" + text + "' (expected inferential, symmetric or offset<c>)");
}

MappingSpec::MappingSpec(AnchorFunctionTable table) : table_(std::move(table)) {
    for (int a : table_.anchors()) {
        for (int b : table_.anchors()) {
            pairs_[{a, b}] = PairMapping::inferential();
        }
    }
}

MappingSpec MappingSpec::standard() {
    MappingSpec spec;
    spec.set({3, 4}, PairMapping::fixed_offset(-6));
    spec.set({4, 3}, PairMapping::held_out());
    return spec;
}

void MappingSpec::set(AnchorPair pair, PairMapping mapping) {
    if (!table_.contains(pair.first) || !table_.contains(pair.second)) {
        throw ConfigError("pair " + pair.to_string() + " uses an unknown anchor");
    }
    pairs_[pair] = mapping;
}

const PairMapping& MappingSpec::mapping(AnchorPair pair) const {
    auto it = pairs_.find(pair);
    if (it == pairs_.end()) {
        throw ConfigError("pair " + pair.to_string() + " is not classified");
    }
    return it->second;
}

std::vector<AnchorPair> MappingSpec::trainable_pairs() const {
    std::vector<AnchorPair> out;
    for (const auto& [pair, m] : pairs_) {
        if (m.kind != PairMapping::Kind::HeldOut) out.push_back(pair);
    }
    return out;
}

std::vector<AnchorPair> MappingSpec::held_out_pairs() const {
    std::vector<AnchorPair> out;
    for (const auto& [pair, m] : pairs_) {
        if (m.kind == PairMapping::Kind::HeldOut) out.push_back(pair);
    }
    return out;
}

int designated_target(int x, AnchorPair pair, const MappingSpec& spec,
                      const std::optional<Designation>& eval_designation) {
    const PairMapping& m = spec.mapping(pair);
    switch (m.kind) {
        case PairMapping::Kind::Inferential:
            return composite_apply(x, pair.first, pair.second, spec.table());
        case PairMapping::Kind::Offset:
            return x + m.offset;
        case PairMapping::Kind::HeldOut:
            if (!eval_designation) {
                throw HeldOutPairError("pair " + pair.to_string() + " is held out and has no training target");
            }
            return apply_designation(x, pair, *eval_designation, spec);
    }
    throw ConfigError("unreachable mapping kind");
}

int apply_designation(int x, AnchorPair pair, const Designation& designation, const MappingSpec& spec) {
    switch (designation.kind) {
        case Designation::Kind::Inferential:
            return composite_apply(x, pair.first, pair.second, spec.table());
        case Designation::Kind::Symmetric: {
            const AnchorPair mirror = pair.reversed();
            if (spec.mapping(mirror).kind == PairMapping::Kind::HeldOut) {
                throw ConfigError("symmetric designation for " + pair.to_string() + " needs " +
                                  mirror.to_string() + " to have an assigned mapping");
            }
            return designated_target(x, mirror, spec);
        }
        case Designation::Kind::Offset:
            return x + designation.offset;
    }
    throw ConfigError("unreachable designation kind");
}

SplitRule SplitRule::for_seq_len(int seq_len) {
    if (seq_len < 4) {
        throw ConfigError("sequence length must be at least 4");
    }
    return {seq_len - 2};
}

const char* to_string(Split split) { return split == Split::Train ? "train" : "test"; }

bool split_check(int x, int pos, const SplitRule& rule, SlotCheck check) {
    const bool on_residue = (x % rule.modulus) == pos;
    return check == SlotCheck::Train ? !on_residue : on_residue;
}

std::vector<int> admissible_items(int pos, const SplitRule& rule, SlotCheck check) {
    std::vector<int> out;
    for (int x = kItemMin; x <= kItemMax; ++x) {
        if (split_check(x, pos, rule, check)) out.push_back(x);
    }
    return out;
}

namespace {

int draw(Rng& rng, const std::vector<int>& values, int pos) {
    if (values.empty()) {
        throw ConfigError("no admissible item for position " + std::to_string(pos));
    }
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    return values[pick(rng)];
}

}  // namespace

Sample generate_sample(Rng& rng, AnchorPair pair, const MappingSpec& spec, const SplitRule& rule,
                       Split split, int seq_len, const std::optional<Designation>& eval_designation) {
    if (rule.modulus < 2) {
        throw ConfigError("split modulus must be at least 2");
    }
    const PairMapping& mapping = spec.mapping(pair);
    if (mapping.kind == PairMapping::Kind::HeldOut && (split == Split::Train || !eval_designation)) {
        throw HeldOutPairError("pair " + pair.to_string() + " is held out and cannot be generated for " +
                               (split == Split::Train ? "training" : "evaluation without a designation"));
    }

    Sample s;
    s.pair = pair;
    s.tokens.assign(static_cast<std::size_t>(seq_len), 0);
    std::uniform_int_distribution<int> pos_dist(0, seq_len - 3);
    s.key_pos = pos_dist(rng);

    const SlotCheck key_check = split == Split::Train ? SlotCheck::Train : SlotCheck::TestKeySlot;
    for (int p = 0; p < seq_len; ++p) {
        if (p == s.key_pos + 1) {
            s.tokens[p] = static_cast<Token>(pair.first);
        } else if (p == s.key_pos + 2) {
            s.tokens[p] = static_cast<Token>(pair.second);
        } else {
            const SlotCheck check = p == s.key_pos ? key_check : SlotCheck::Train;
            s.tokens[p] = static_cast<Token>(draw(rng, admissible_items(p, rule, check), p));
        }
    }
    const int target = designated_target(s.key(), pair, spec, eval_designation);
    if (target < 0) {
        throw ConfigError("negative target " + std::to_string(target) + " for pair " + pair.to_string());
    }
    s.target = static_cast<Token>(target);
    return s;
}

std::string validate_sample(const Sample& s, const MappingSpec& spec, const SplitRule& rule, Split split,
                            const std::optional<Designation>& eval_designation) {
    const int n = static_cast<int>(s.tokens.size());
    if (s.key_pos < 0 || s.key_pos + 2 >= n) return "key_pos out of range";
    for (int p = 0; p < n; ++p) {
        const int t = s.tokens[p];
        const bool anchor_slot = p == s.key_pos + 1 || p == s.key_pos + 2;
        if (anchor_slot) {
            if (!spec.is_anchor(t)) return "non-anchor token at anchor slot " + std::to_string(p);
            continue;
        }
        if (t < kItemMin || t > kItemMax) return "item out of range at position " + std::to_string(p);
        const SlotCheck check = (p == s.key_pos && split == Split::Test) ? SlotCheck::TestKeySlot : SlotCheck::Train;
        if (!split_check(t, p, rule, check)) return "placement rule violated at position " + std::to_string(p);
    }
    if (AnchorPair{s.tokens[s.key_pos + 1], s.tokens[s.key_pos + 2]} != s.pair) return "pair mismatch";
    try {
        if (designated_target(s.key(), s.pair, spec, eval_designation) != s.target) return "target mismatch";
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

Dataset build_dataset(const DatasetConfig& config, const MappingSpec& spec) {
    if (config.count == 0) {
        throw ConfigError("dataset sample count must be positive");
    }
    const SplitRule rule = SplitRule::for_seq_len(config.seq_len);
    const auto pairs = spec.trainable_pairs();
    if (pairs.empty()) {
        throw ConfigError("mapping spec has no trainable pairs");
    }
    Dataset ds{{}, config.split, config.seed, config.seq_len, spec};
    ds.samples.reserve(config.count);
    const std::uint64_t stream = substream_seed(config.seed, config.split == Split::Train ? "data.train" : "data.test");
    for (std::size_t i = 0; i < config.count; ++i) {
        Rng rng{indexed_seed(stream, i)};
        ds.samples.push_back(generate_sample(rng, pairs[i % pairs.size()], spec, rule, config.split, config.seq_len));
    }
    return ds;
}

namespace {
constexpr char kDatasetMagic[4] = {'A', 'P', 'L', 'D'};
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write dataset " + path.string());
    }
    out.write(kDatasetMagic, 4);
    le::put<std::uint32_t>(out, kDatasetVersion);
    le::put<std::uint64_t>(out, ds.samples.size());
    le::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.seq_len));
    le::put<std::uint64_t>(out, ds.seed);
    for (const Sample& s : ds.samples) {
        for (Token t : s.tokens) le::put<std::uint16_t>(out, t);
        le::put<std::uint8_t>(out, static_cast<std::uint8_t>(s.key_pos));
        le::put<std::uint16_t>(out, s.target);
    }
    if (!out) {
        throw IoError("write failed for dataset " + path.string());
    }
}

Dataset load_dataset(const std::filesystem::path& path, const MappingSpec& spec, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open dataset " + path.string());
    }
    try {
        char magic[4];
        if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kDatasetMagic)) {
            throw IoError("bad magic");
        }
        const auto version = le::get<std::uint32_t>(in);
        if (version != kDatasetVersion) {
            throw IoError("unsupported version " + std::to_string(version));
        }
        const auto count = le::get<std::uint64_t>(in);
        const auto seq_len = le::get<std::uint32_t>(in);
        const auto seed = le::get<std::uint64_t>(in);
        const SplitRule rule = SplitRule::for_seq_len(static_cast<int>(seq_len));

        Dataset ds{{}, split, seed, static_cast<int>(seq_len), spec};
        ds.samples.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            Sample s;
            s.tokens.resize(seq_len);
            for (auto& t : s.tokens) t = le::get<std::uint16_t>(in);
            s.key_pos = le::get<std::uint8_t>(in);
            s.target = le::get<std::uint16_t>(in);
            if (s.key_pos + 2 >= static_cast<int>(seq_len)) {
                throw IoError("record " + std::to_string(i) + ": key_pos out of range");
            }
            s.pair = {s.tokens[s.key_pos + 1], s.tokens[s.key_pos + 2]};
            if (auto why = validate_sample(s, spec, rule, split); !why.empty()) {
                throw IoError("record " + std::to_string(i) + ": " + why);
            }
            ds.samples.push_back(std::move(s));
        }
        return ds;
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace apl
