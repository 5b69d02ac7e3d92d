//! Fund-flow case model.
//!
//! Every normal transaction (together with its internal transactions) is
//! summarized as one of 244 valid cases over eight variables: who sent it,
//! whether it was the creation, whether anything errored, and how the
//! balances of the creator, the contract, the sender and all other
//! accounts moved. The raw space is 2^5 x 3^3 = 864 tuples; invalid
//! combinations are discarded and the survivors get sequential IDs 0..243
//! in a frozen enumeration order that doubles as the wire format for the
//! `fundFlowCase<N>` feature columns.

use crate::chain_data::{Address, InternalTransaction, NormalTransaction};
use num_bigint::{BigInt, Sign};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

pub const CASE_COUNT: usize = 244;
/// Size of the full variable product 2⁵×3³ before collapsing the sender
/// balance to not-applicable for creator-sent events.
pub const RAW_CASE_COUNT: usize = 864;
/// Tuples actually enumerated once the creator rows are collapsed: the 432
/// creator combinations shrink threefold, 864 − 2·144 = 576.
pub const COLLAPSED_CASE_COUNT: usize = 576;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sender {
    Creator,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BalanceChange {
    Up,
    Unchanged,
    Down,
}

/// Balance change of the sender account; collapsed to a single
/// `NotApplicable` value when the sender is the creator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SenderBalance {
    Up,
    Unchanged,
    Down,
    NotApplicable,
}

/// One assignment of the eight fund-flow variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FundFlowCase {
    pub sender: Sender,
    pub creation: bool,
    pub error: bool,
    pub balance_creator: BalanceChange,
    pub balance_contract: BalanceChange,
    pub balance_sender: SenderBalance,
    pub balance_other_positive: bool,
    pub balance_other_negative: bool,
}

impl FundFlowCase {
    /// All three structural invariants:
    /// creation implies the creator sent it; the sender balance is
    /// not-applicable exactly when the creator is the sender; and at least
    /// one balance goes up iff at least one goes down.
    pub fn is_valid(&self) -> bool {
        if self.creation && self.sender != Sender::Creator {
            return false;
        }
        if (self.balance_sender == SenderBalance::NotApplicable)
            != (self.sender == Sender::Creator)
        {
            return false;
        }
        let has_up = self.balance_creator == BalanceChange::Up
            || self.balance_contract == BalanceChange::Up
            || self.balance_sender == SenderBalance::Up
            || self.balance_other_positive;
        let has_down = self.balance_creator == BalanceChange::Down
            || self.balance_contract == BalanceChange::Down
            || self.balance_sender == SenderBalance::Down
            || self.balance_other_negative;
        has_up == has_down
    }

    /// Compact description in the style of the published case tables:
    /// false flags and unchanged balances are omitted.
    pub fn describe(&self) -> String {
        let mut parts = vec![format!(
            "sender={}",
            match self.sender {
                Sender::Creator => "creator",
                Sender::Other => "other",
            }
        )];
        if self.creation {
            parts.push("creation=True".into());
        }
        if self.error {
            parts.push("error=True".into());
        }
        let sign = |c: BalanceChange| match c {
            BalanceChange::Up => Some("positive"),
            BalanceChange::Down => Some("negative"),
            BalanceChange::Unchanged => None,
        };
        if let Some(s) = sign(self.balance_creator) {
            parts.push(format!("balanceCreator={s}"));
        }
        if let Some(s) = sign(self.balance_contract) {
            parts.push(format!("balanceContract={s}"));
        }
        match self.balance_sender {
            SenderBalance::Up => parts.push("balanceSender=positive".into()),
            SenderBalance::Down => parts.push("balanceSender=negative".into()),
            SenderBalance::Unchanged | SenderBalance::NotApplicable => {}
        }
        if self.balance_other_positive {
            parts.push("balanceOtherPositive=True".into());
        }
        if self.balance_other_negative {
            parts.push("balanceOtherNegative=True".into());
        }
        parts.join(", ")
    }
}

/// Canonical identifier of a valid case, in `0..244`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaseId(pub u16);

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Enumerate the raw 864-tuple space in canonical lexicographic order.
///
/// Variable order and per-variable value order follow the model
/// definition: sender (creator, other), creation (yes, no), error
/// (yes, no), balanceCreator (up, unchanged, down), balanceContract
/// (up, unchanged, down), balanceSender (up, unchanged, down; collapsed to
/// notApplicable when sender=creator), balanceOtherPositive (yes, no),
/// balanceOtherNegative (yes, no).
pub fn enumerate_raw_cases() -> Vec<FundFlowCase> {
    const CHANGES: [BalanceChange; 3] =
        [BalanceChange::Up, BalanceChange::Unchanged, BalanceChange::Down];
    let mut out = Vec::with_capacity(RAW_CASE_COUNT);
    for sender in [Sender::Creator, Sender::Other] {
        for creation in [true, false] {
            for error in [true, false] {
                for balance_creator in CHANGES {
                    for balance_contract in CHANGES {
                        let sender_values: &[SenderBalance] = match sender {
                            Sender::Creator => &[SenderBalance::NotApplicable],
                            Sender::Other => {
                                &[SenderBalance::Up, SenderBalance::Unchanged, SenderBalance::Down]
                            }
                        };
                        for &balance_sender in sender_values {
                            for balance_other_positive in [true, false] {
                                for balance_other_negative in [true, false] {
                                    out.push(FundFlowCase {
                                        sender,
                                        creation,
                                        error,
                                        balance_creator,
                                        balance_contract,
                                        balance_sender,
                                        balance_other_positive,
                                        balance_other_negative,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// The 244 valid cases with sequential IDs in enumeration order.
pub fn enumerate_valid_cases() -> Vec<(CaseId, FundFlowCase)> {
    enumerate_raw_cases()
        .into_iter()
        .filter(FundFlowCase::is_valid)
        .enumerate()
        .map(|(i, c)| (CaseId(i as u16), c))
        .collect()
}

/// Shared id<->tuple catalog, computed once.
pub struct CaseCatalog {
    cases: Vec<FundFlowCase>,
    ids: HashMap<FundFlowCase, CaseId>,
}

impl CaseCatalog {
    pub fn global() -> &'static CaseCatalog {
        static CATALOG: OnceLock<CaseCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            let entries = enumerate_valid_cases();
            let cases: Vec<FundFlowCase> = entries.iter().map(|(_, c)| *c).collect();
            let ids = entries.iter().map(|(id, c)| (*c, *id)).collect();
            CaseCatalog { cases, ids }
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn case(&self, id: CaseId) -> FundFlowCase {
        self.cases[id.0 as usize]
    }

    pub fn id(&self, case: &FundFlowCase) -> Option<CaseId> {
        self.ids.get(case).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CaseId, FundFlowCase)> + '_ {
        self.cases.iter().enumerate().map(|(i, c)| (CaseId(i as u16), *c))
    }
}

/// Classify one normal-transaction event into its fund-flow case.
///
/// Per-account wei deltas are accumulated exactly: each error-free
/// transfer (the normal transaction and every internal one) subtracts its
/// value from `from` and adds it to `to`, or to `contractAddress` for
/// creations. Errored transfers are rolled back and contribute nothing,
/// but still set the error flag. Because every applied delta subtracts and
/// adds the same amount, the delta sum is zero and the resulting tuple is
/// always valid, so this function is total.
pub fn classify_event(
    tx: &NormalTransaction,
    internals: &[&InternalTransaction],
    creator: &Address,
    contract: &Address,
) -> CaseId {
    let mut deltas: HashMap<&Address, BigInt> = HashMap::new();
    let mut error = tx.is_error;

    fn apply<'a>(
        deltas: &mut HashMap<&'a Address, BigInt>,
        from: &'a Address,
        to: Option<&'a Address>,
        value: &num_bigint::BigUint,
    ) {
        let Some(to) = to else { return };
        if value.bits() == 0 {
            return;
        }
        let signed = BigInt::from_biguint(Sign::Plus, value.clone());
        *deltas.entry(to).or_default() += &signed;
        *deltas.entry(from).or_default() -= &signed;
    }

    if !tx.is_error {
        apply(&mut deltas, &tx.from, tx.to.as_ref().or(tx.contract_address.as_ref()), &tx.value.0);
    }
    for internal in internals {
        if internal.is_error {
            error = true;
            continue;
        }
        apply(
            &mut deltas,
            &internal.from,
            internal.to.as_ref().or(internal.contract_address.as_ref()),
            &internal.value.0,
        );
    }

    let sign_of = |addr: &Address| -> BalanceChange {
        match deltas.get(addr).map(|d| d.sign()).unwrap_or(Sign::NoSign) {
            Sign::Plus => BalanceChange::Up,
            Sign::NoSign => BalanceChange::Unchanged,
            Sign::Minus => BalanceChange::Down,
        }
    };

    // Self-calls (tx.from == contract) count as "other": only the creator
    // is ever the creator.
    let sender = if tx.from == *creator { Sender::Creator } else { Sender::Other };
    let balance_sender = match sender {
        Sender::Creator => SenderBalance::NotApplicable,
        Sender::Other => match sign_of(&tx.from) {
            BalanceChange::Up => SenderBalance::Up,
            BalanceChange::Unchanged => SenderBalance::Unchanged,
            BalanceChange::Down => SenderBalance::Down,
        },
    };

    let mut other_positive = false;
    let mut other_negative = false;
    for (addr, delta) in &deltas {
        if *addr == creator || *addr == contract || (sender == Sender::Other && **addr == tx.from) {
            continue;
        }
        match delta.sign() {
            Sign::Plus => other_positive = true,
            Sign::Minus => other_negative = true,
            Sign::NoSign => {}
        }
    }

    let case = FundFlowCase {
        sender,
        creation: tx.contract_address.as_ref() == Some(contract),
        error,
        balance_creator: sign_of(creator),
        balance_contract: sign_of(contract),
        balance_sender,
        balance_other_positive: other_positive,
        balance_other_negative: other_negative,
    };

    CaseCatalog::global()
        .id(&case)
        .expect("delta-sum-zero guarantees a valid case")
}

/// Classify every normal transaction of a contract, joining internal
/// transactions by parent hash.
pub fn classify_contract_events(
    normals: &[NormalTransaction],
    internals: &[InternalTransaction],
    creator: &Address,
    contract: &Address,
) -> Vec<CaseId> {
    let mut by_parent: HashMap<&str, Vec<&InternalTransaction>> = HashMap::new();
    for internal in internals {
        by_parent.entry(internal.parent_hash.as_str()).or_default().push(internal);
    }
    normals
        .iter()
        .map(|tx| {
            let children = by_parent.get(tx.hash.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            classify_event(tx, children, creator, contract)
        })
        .collect()
}

/// Per-contract case frequencies: counts normalized by the event total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    pub freq: Vec<f64>,
    pub event_count: usize,
}

#[derive(Debug, Error)]
pub enum FundFlowError {
    #[error("no events: every known contract has at least its creation event")]
    EmptyEvents,
}

pub fn frequency_vector(events: &[CaseId]) -> Result<FrequencyVector, FundFlowError> {
    if events.is_empty() {
        return Err(FundFlowError::EmptyEvents);
    }
    let mut freq = vec![0.0; CASE_COUNT];
    for id in events {
        freq[id.0 as usize] += 1.0;
    }
    let n = events.len() as f64;
    for f in &mut freq {
        *f /= n;
    }
    Ok(FrequencyVector { freq, event_count: events.len() })
}

/// Partial assignment of the eight variables; unset fields match anything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CasePredicate {
    pub sender: Option<Sender>,
    pub creation: Option<bool>,
    pub error: Option<bool>,
    pub balance_creator: Option<BalanceChange>,
    pub balance_contract: Option<BalanceChange>,
    pub balance_sender: Option<SenderBalance>,
    pub balance_other_positive: Option<bool>,
    pub balance_other_negative: Option<bool>,
}

impl CasePredicate {
    pub fn matches(&self, case: &FundFlowCase) -> bool {
        self.sender.map_or(true, |v| v == case.sender)
            && self.creation.map_or(true, |v| v == case.creation)
            && self.error.map_or(true, |v| v == case.error)
            && self.balance_creator.map_or(true, |v| v == case.balance_creator)
            && self.balance_contract.map_or(true, |v| v == case.balance_contract)
            && self.balance_sender.map_or(true, |v| v == case.balance_sender)
            && self.balance_other_positive.map_or(true, |v| v == case.balance_other_positive)
            && self.balance_other_negative.map_or(true, |v| v == case.balance_other_negative)
    }

    /// IDs of all catalog cases matching the partial assignment.
    pub fn matching_ids(&self) -> Vec<CaseId> {
        CaseCatalog::global()
            .iter()
            .filter(|(_, c)| self.matches(c))
            .map(|(id, _)| id)
            .collect()
    }
}

/// Sum, per contract, the frequencies of every case matching the
/// predicate. Input is `(address-or-key, frequency vector)` pairs.
pub fn query_cases<'a, K>(
    predicate: &CasePredicate,
    contracts: impl IntoIterator<Item = (K, &'a FrequencyVector)>,
) -> Vec<(K, f64)> {
    let ids = predicate.matching_ids();
    contracts
        .into_iter()
        .map(|(key, fv)| {
            let total = ids.iter().map(|id| fv.freq[id.0 as usize]).sum();
            (key, total)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_data::Wei;

    fn addr(tag: &str) -> Address {
        Address::new(tag)
    }

    fn tx(
        from: &Address,
        to: Option<&Address>,
        contract_address: Option<&Address>,
        value: u128,
        is_error: bool,
    ) -> NormalTransaction {
        NormalTransaction {
            hash: "0xabc".into(),
            block_number: 10,
            timestamp: 1000,
            from: from.clone(),
            to: to.cloned(),
            contract_address: contract_address.cloned(),
            value: Wei::from_u128(value),
            gas: 100_000,
            gas_used: 60_000,
            is_error,
        }
    }

    const ETHER: u128 = 1_000_000_000_000_000_000;

    #[test]
    fn exactly_244_valid_cases() {
        let cases = enumerate_valid_cases();
        assert_eq!(cases.len(), CASE_COUNT);
        assert_eq!(enumerate_raw_cases().len(), COLLAPSED_CASE_COUNT);
        // the collapse removes two of the three sender-balance values for
        // each of the 144 creator combinations
        assert_eq!(RAW_CASE_COUNT - 2 * 144, COLLAPSED_CASE_COUNT);
        for (i, (id, case)) in cases.iter().enumerate() {
            assert_eq!(id.0 as usize, i);
            assert!(case.is_valid());
        }
    }

    /// Independent oracle: brute-force every combination of the eight
    /// variables with a four-valued sender balance, keep the valid ones,
    /// and compare against the catalog as a set.
    #[test]
    fn brute_force_over_the_full_product_matches_the_catalog() {
        const CHANGES: [BalanceChange; 3] =
            [BalanceChange::Up, BalanceChange::Unchanged, BalanceChange::Down];
        const SENDER_BALANCES: [SenderBalance; 4] = [
            SenderBalance::Up,
            SenderBalance::Unchanged,
            SenderBalance::Down,
            SenderBalance::NotApplicable,
        ];
        let mut brute: Vec<FundFlowCase> = Vec::new();
        for sender in [Sender::Creator, Sender::Other] {
            for creation in [true, false] {
                for error in [true, false] {
                    for balance_creator in CHANGES {
                        for balance_contract in CHANGES {
                            for balance_sender in SENDER_BALANCES {
                                for balance_other_positive in [true, false] {
                                    for balance_other_negative in [true, false] {
                                        let case = FundFlowCase {
                                            sender,
                                            creation,
                                            error,
                                            balance_creator,
                                            balance_contract,
                                            balance_sender,
                                            balance_other_positive,
                                            balance_other_negative,
                                        };
                                        if case.is_valid() {
                                            brute.push(case);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let from_catalog: std::collections::HashSet<FundFlowCase> =
            enumerate_valid_cases().into_iter().map(|(_, c)| c).collect();
        let from_brute: std::collections::HashSet<FundFlowCase> =
            brute.iter().copied().collect();
        assert_eq!(brute.len(), CASE_COUNT, "brute force finds a duplicate or extra");
        assert_eq!(from_brute, from_catalog);
    }

    /// The eight anchor IDs published for the top frequency tables.
    #[test]
    fn anchor_ids_decode_to_published_descriptions() {
        let catalog = CaseCatalog::global();
        let expect = [
            (33, "sender=creator, creation=True"),
            (73, "sender=creator, balanceCreator=positive, balanceContract=negative"),
            (77, "sender=creator"),
            (83, "sender=creator, balanceCreator=negative, balanceContract=positive"),
            (127, "sender=other, error=True"),
            (201, "sender=other, balanceContract=positive, balanceSender=negative"),
            (205, "sender=other"),
            (207, "sender=other, balanceSender=negative, balanceOtherPositive=True"),
        ];
        for (id, description) in expect {
            assert_eq!(catalog.case(CaseId(id)).describe(), description, "id {id}");
        }
    }

    #[test]
    fn id_tuple_lookup_is_identity() {
        let catalog = CaseCatalog::global();
        for (id, case) in catalog.iter() {
            assert_eq!(catalog.id(&case), Some(id));
        }
    }

    #[test]
    fn invalid_tuples_rejected() {
        // creation from a non-creator
        let mut c = CaseCatalog::global().case(CaseId(205));
        c.creation = true;
        assert!(!c.is_valid());
        // up without any down
        let c = FundFlowCase {
            sender: Sender::Creator,
            creation: false,
            error: false,
            balance_creator: BalanceChange::Up,
            balance_contract: BalanceChange::Unchanged,
            balance_sender: SenderBalance::NotApplicable,
            balance_other_positive: false,
            balance_other_negative: false,
        };
        assert!(!c.is_valid());
        // no movement at all is fine
        let c = FundFlowCase { balance_creator: BalanceChange::Unchanged, ..c };
        assert!(c.is_valid());
    }

    #[test]
    fn creation_with_zero_value_is_case_33() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let creation = tx(&creator, None, Some(&contract), 0, false);
        assert_eq!(classify_event(&creation, &[], &creator, &contract), CaseId(33));
    }

    #[test]
    fn creator_deposit_is_case_83() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let deposit = tx(&creator, Some(&contract), None, ETHER, false);
        assert_eq!(classify_event(&deposit, &[], &creator, &contract), CaseId(83));
    }

    #[test]
    fn errored_victim_tx_is_case_127() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let victim = addr("0xv0");
        let failed = NormalTransaction { from: victim, ..tx(&creator, Some(&contract), None, ETHER, true) };
        assert_eq!(classify_event(&failed, &[], &creator, &contract), CaseId(127));
    }

    /// Deposit of v answered by an internal payout of 2v: the contract nets
    /// down, the sender nets up. Oracle: linear scan of the enumeration
    /// output for the expected tuple.
    #[test]
    fn overpaying_contract_nets_sender_up() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let victim = addr("0xv0");
        let deposit = NormalTransaction {
            from: victim.clone(),
            ..tx(&creator, Some(&contract), None, ETHER, false)
        };
        let payout = InternalTransaction {
            parent_hash: deposit.hash.clone(),
            from: contract.clone(),
            to: Some(victim.clone()),
            contract_address: None,
            value: Wei::from_u128(2 * ETHER),
            gas: 30_000,
            gas_used: 20_000,
            is_error: false,
        };
        let got = classify_event(&deposit, &[&payout], &creator, &contract);
        let expected = FundFlowCase {
            sender: Sender::Other,
            creation: false,
            error: false,
            balance_creator: BalanceChange::Unchanged,
            balance_contract: BalanceChange::Down,
            balance_sender: SenderBalance::Up,
            balance_other_positive: false,
            balance_other_negative: false,
        };
        let oracle = enumerate_valid_cases()
            .into_iter()
            .find(|(_, c)| *c == expected)
            .map(|(id, _)| id)
            .unwrap();
        assert_eq!(got, oracle);
    }

    #[test]
    fn errored_internal_sets_error_but_moves_nothing() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let deposit = tx(&creator, Some(&contract), None, ETHER, false);
        let failed_payout = InternalTransaction {
            parent_hash: deposit.hash.clone(),
            from: contract.clone(),
            to: Some(creator.clone()),
            contract_address: None,
            value: Wei::from_u128(ETHER),
            gas: 30_000,
            gas_used: 30_000,
            is_error: true,
        };
        let got = classify_event(&deposit, &[&failed_payout], &creator, &contract);
        let case = CaseCatalog::global().case(got);
        assert!(case.error);
        assert_eq!(case.balance_creator, BalanceChange::Down);
        assert_eq!(case.balance_contract, BalanceChange::Up);
    }

    #[test]
    fn frequency_vector_counts_and_normalizes() {
        let events = [CaseId(33), CaseId(83), CaseId(83), CaseId(205)];
        let fv = frequency_vector(&events).unwrap();
        assert_eq!(fv.freq[33], 0.25);
        assert_eq!(fv.freq[83], 0.5);
        assert_eq!(fv.freq[205], 0.25);
        assert!((fv.freq.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(fv.event_count, 4);
        assert!(frequency_vector(&[]).is_err());
    }

    #[test]
    fn empty_predicate_sums_to_one() {
        let events = [CaseId(33), CaseId(83)];
        let fv = frequency_vector(&events).unwrap();
        let result = query_cases(&CasePredicate::default(), [("c", &fv)]);
        assert!((result[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_match_predicate() {
        let events = [CaseId(83)];
        let fv = frequency_vector(&events).unwrap();
        let predicate = CasePredicate {
            sender: Some(Sender::Creator),
            balance_creator: Some(BalanceChange::Down),
            balance_contract: Some(BalanceChange::Up),
            ..Default::default()
        };
        let result = query_cases(&predicate, [("c", &fv)]);
        assert_eq!(result[0].1, 1.0);
    }
}
