use std::cmp::Ordering;

use crate::model::{AgentId, ContactEntry, ResourceBundle};
use crate::pricing::total_cost;

/// Picks the live provider pricing every requested type with the lowest total
/// cost, breaking ties by higher grade and then lower provider id.
pub fn select_best_provider(temp: &[ContactEntry], bundle: &ResourceBundle, p: f64) -> Option<AgentId> {
    temp.iter()
        .filter(|e| e.is_live())
        .filter_map(|e| total_cost(bundle, &e.prices, p).ok().map(|cost| (cost, e)))
        .min_by(|(ca, a), (cb, b)| {
            ca.cmp(cb)
                .then_with(|| b.grade.partial_cmp(&a.grade).unwrap_or(Ordering::Equal))
                .then_with(|| a.provider.cmp(&b.provider))
        })
        .map(|(_, e)| e.provider)
}

/// Refreshes a contact list from the broker's current view of the registry.
///
/// Providers that left are dropped. Known providers keep their learned prices
/// and grade; newly visible ones are appended in registry order.
pub fn update_contact_list(list: &[ContactEntry], registry_view: &[ContactEntry]) -> Vec<ContactEntry> {
    let mut refreshed: Vec<ContactEntry> = list
        .iter()
        .filter(|e| registry_view.iter().any(|v| v.provider == e.provider && v.is_live()))
        .cloned()
        .map(|mut e| {
            e.status = crate::model::ProviderStatus::Live;
            e
        })
        .collect();
    for entry in registry_view.iter().filter(|v| v.is_live()) {
        if !refreshed.iter().any(|e| e.provider == entry.provider) {
            refreshed.push(entry.clone());
        }
    }
    refreshed
}
