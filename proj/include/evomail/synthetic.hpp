#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evomail/email.hpp"

namespace evomail {

enum class Phase { P1 = 1, P2 = 2, P3 = 3 };
std::string_view to_string(Phase phase);
/// "P1"/"p1"/"1" style names. Throws ConfigError.
Phase parse_phase(std::string_view text);

struct PhaseSpec {
    Phase phase = Phase::P1;
    int n_emails = 1000;
    double spam_ratio = 0.5;
    std::uint64_t seed = 7;
    std::int64_t start_epoch = 1704067200;  // 2024-01-01
    double window_days = 180.0;
};

/// Raw RFC 5322 messages for one phase, in generation order. Deterministic
/// under the seed. Throws ConfigError on a bad spec.
std::vector<std::string> generate_phase_messages(const PhaseSpec& spec);

/// Parsed, labeled documents of generate_phase_messages with unique ids.
std::vector<EmailDocument> generate_phase_corpus(const PhaseSpec& spec);

/// Campaign tags of the spam templates used by a phase, in bank order.
std::vector<std::string> spam_templates(Phase phase);

/// Words that mark keyword-template spam.
const std::vector<std::string>& keyword_markers();

/// Whether the document shows one of the phase's attack markers.
bool has_attack_marker(const EmailDocument& doc, Phase phase);

/// Mbox rendering ("From " separators, >From quoting).
std::string to_mbox(const std::vector<std::string>& messages);

}  // namespace evomail
