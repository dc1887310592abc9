use earlyrisk::corpus::{
    chunk_user, generate_synthetic_corpus, parse_corpus, write_corpus, GeneratorProfile, Label,
    Message, UserRecord,
};
use proptest::prelude::*;

fn user_with(n: usize) -> UserRecord {
    let msgs = (0..n)
        .map(|i| Message::new("", format!("m{i}"), i as u64))
        .collect();
    UserRecord::new("u", Some(Label::Negative), msgs)
}

proptest! {
    #[test]
    fn chunks_partition_the_stream(n in 1usize..5000) {
        let user = user_with(n);
        let stream = chunk_user(&user, 10).unwrap();
        let joined: Vec<&Message> = stream.chunks.iter().flat_map(|c| c.iter()).collect();
        prop_assert_eq!(joined.len(), n);
        for (a, b) in joined.iter().zip(&user.messages) {
            prop_assert_eq!(*a, b);
        }
        prop_assert_eq!(*stream.cumulative_counts.last().unwrap(), n);
        let ideal = n as f64 / 10.0;
        for c in &stream.chunks {
            prop_assert!((c.len() as f64 - ideal).abs() < 1.0);
        }
        if n >= 10 {
            prop_assert!(stream.chunks.iter().all(|c| !c.is_empty()));
        }
    }

    #[test]
    fn corpus_round_trips(seed in 0u64..200, pos in 0usize..4, neg in 0usize..4) {
        let profile = GeneratorProfile { max_messages: 15, empty_message_rate: 0.1, ..GeneratorProfile::default() };
        let users = generate_synthetic_corpus(pos, neg, seed, &profile).unwrap();
        prop_assert_eq!(users.iter().filter(|u| u.label == Some(Label::Positive)).count(), pos);
        let mut buf = Vec::new();
        write_corpus(&mut buf, &users).unwrap();
        let back = parse_corpus(&buf[..]).unwrap();
        prop_assert_eq!(back, users);
    }
}
