#include <doctest.h>

#include <algorithm>
#include <set>

#include "evomail/email.hpp"
#include "evomail/error.hpp"
#include "evomail/synthetic.hpp"

using namespace evomail;

namespace {

PhaseSpec spec(Phase p, int n = 200, std::uint64_t seed = 7) {
    PhaseSpec s;
    s.phase = p;
    s.n_emails = n;
    s.seed = seed;
    return s;
}

bool non_ascii(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) >= 0x80; });
}

}  // namespace

TEST_CASE("generation is deterministic") {
    const auto a = generate_phase_messages(spec(Phase::P1, 100));
    const auto b = generate_phase_messages(spec(Phase::P1, 100));
    CHECK(a == b);
    CHECK(a.size() == 100);
    CHECK(generate_phase_messages(spec(Phase::P1, 100, 8)) != a);
    CHECK(generate_phase_corpus(spec(Phase::P3, 50)) == generate_phase_corpus(spec(Phase::P3, 50)));
}

TEST_CASE("labels, ratio and timestamps") {
    for (Phase p : {Phase::P1, Phase::P2, Phase::P3}) {
        const auto s = spec(p, 300);
        const auto docs = generate_phase_corpus(s);
        REQUIRE(docs.size() == 300);
        int spam = 0;
        std::set<std::string> ids;
        for (const auto& d : docs) {
            REQUIRE(d.label);
            spam += *d.label == Label::Spam;
            CHECK(ids.insert(d.id).second);
            REQUIRE(d.timestamp);
            CHECK(*d.timestamp >= s.start_epoch);
            CHECK(*d.timestamp <= s.start_epoch + static_cast<std::int64_t>(s.window_days * 86400));
            CHECK(!d.sender_address.empty());
            CHECK(!d.campaign.empty());
        }
        CHECK(spam == 150);
    }
}

TEST_CASE("label soundness") {
    for (Phase p : {Phase::P1, Phase::P2, Phase::P3}) {
        for (const auto& d : generate_phase_corpus(spec(p, 400, 11))) {
            INFO(to_string(p), " ", d.campaign);
            if (*d.label == Label::Spam) {
                CHECK(has_attack_marker(d, p));
            } else {
                for (Phase q : {Phase::P1, Phase::P2, Phase::P3}) CHECK(!has_attack_marker(d, q));
            }
        }
    }
}

TEST_CASE("phase tactics") {
    for (const auto& d : generate_phase_corpus(spec(Phase::P3, 300))) {
        if (*d.label != Label::Spam) continue;
        REQUIRE(d.reply_to);
        CHECK(*d.reply_to != d.sender_address);
        CHECK(d.auth.spf == AuthResult::Fail);
    }
    int obfuscated = 0;
    int p2_spam = 0;
    for (const auto& d : generate_phase_corpus(spec(Phase::P2, 300))) {
        if (*d.label != Label::Spam) continue;
        ++p2_spam;
        obfuscated += non_ascii(d.subject) || non_ascii(d.body);
    }
    CHECK(obfuscated == p2_spam);
    const auto t1 = spam_templates(Phase::P1);
    const auto t3 = spam_templates(Phase::P3);
    CHECK(!t1.empty());
    CHECK(t3.size() >= 10);
    for (const auto& t : t3) CHECK(std::find(t1.begin(), t1.end(), t) == t1.end());
    CHECK(!keyword_markers().empty());
}

TEST_CASE("mbox rendering parses back") {
    const auto messages = generate_phase_messages(spec(Phase::P2, 40));
    const auto mbox = to_mbox(messages);
    const auto entries = split_mbox(mbox);
    REQUIRE(entries.size() == messages.size());
    const auto docs = generate_phase_corpus(spec(Phase::P2, 40));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto d = parse_email(entries[i], MessageFormat::MboxEntry);
        CHECK(d.subject == docs[i].subject);
        CHECK(d.sender_address == docs[i].sender_address);
        CHECK(d.label == docs[i].label);
    }
    CHECK(to_mbox({"Subject: x\n\nFrom here\n"}).find("\n>From here\n") != std::string::npos);
}

TEST_CASE("phase names and bad specs") {
    CHECK(parse_phase("P2") == Phase::P2);
    CHECK(parse_phase("p3") == Phase::P3);
    CHECK(parse_phase("1") == Phase::P1);
    CHECK(to_string(Phase::P1) == "P1");
    CHECK_THROWS_AS(parse_phase("P4"), ConfigError);
    auto s = spec(Phase::P1);
    s.spam_ratio = 1.0;
    CHECK_THROWS_AS(generate_phase_messages(s), ConfigError);
    s = spec(Phase::P1);
    s.n_emails = -1;
    CHECK_THROWS_AS(generate_phase_messages(s), ConfigError);
}
