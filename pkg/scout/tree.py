"""Directive tree: UCB selection, reward accounting, backpropagation, expansion."""
import math
import threading
from collections import Counter
from dataclasses import dataclass, field

from scout.exceptions import DuplicateDirective
from utils.text import digest

DEFAULT_C = 1.2
ROOT_ID = 0


@dataclass
class DirectiveNode:
    id: int
    directive: str = ''
    instructions: str = ''
    parent: int | None = None
    children: list = field(default_factory=list)
    visits: int = 0
    cumulative_reward: float = 0.0
    created_epoch: int = 0

    @property
    def is_leaf(self):
        return not self.children

    @property
    def mean_reward(self):
        return self.cumulative_reward / self.visits if self.visits else 0.0


@dataclass(frozen=True)
class SelectionBudget:
    m: int = 1
    c: float = DEFAULT_C

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f'm must be >= 1, got {self.m}')
        if self.c <= 0:
            raise ValueError(f'c must be > 0, got {self.c}')


def ucb_value(reward, visits, parent_visits, c=DEFAULT_C):
    if visits == 0:
        return math.inf
    return reward / visits + c * math.sqrt(math.log(max(1, parent_visits)) / visits)


def ucb_score(node, parent_visits, c=DEFAULT_C):
    """W/N + c*sqrt(ln(max(1, N_parent))/N). 방문한 적 없으면 +inf"""
    return ucb_value(node.cumulative_reward, node.visits, parent_visits, c)


def node_reward(precision, new_unique):
    """precision-gated novelty: r = p * |ΔÃ|"""
    if not 0.0 <= precision <= 1.0:
        raise ValueError(f'precision must be within [0, 1], got {precision}')
    return precision * len(new_unique)


def precision_of(valid_count, candidate_count):
    # 후보가 0개면 0/0 이므로 p=0 으로 정의
    return valid_count / candidate_count if candidate_count else 0.0


class DirectiveTree:

    def __init__(self):
        self.nodes = {ROOT_ID: DirectiveNode(id=ROOT_ID)}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, node_id):
        return self.nodes[node_id]

    @property
    def root(self):
        return self.nodes[ROOT_ID]

    def path(self, node_id):
        """root 부터 node 까지"""
        path = []
        node = self.nodes[node_id]
        while node is not None:
            path.append(node.id)
            node = self.nodes[node.parent] if node.parent is not None else None
        return path[::-1]

    def lineage(self, node_id):
        return [self.nodes[k].directive for k in self.path(node_id) if self.nodes[k].directive]

    def leaves(self):
        return [node.id for node in self.walk() if node.is_leaf]

    def walk(self, node_id=ROOT_ID):
        stack = [node_id]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            stack.extend(reversed(node.children))

    def find_child(self, parent_id, directive):
        for child_id in self.nodes[parent_id].children:
            if self.nodes[child_id].directive == directive:
                return child_id
        return None

    # Selection

    def select_leaves(self, budget):
        """root 에서 UCB 최대 자식을 따라 내려가서 leaf 를 최대 m 개 고름.

        두 번째 leaf 부터는 이미 고른 경로에 가상 방문(N+1)을 더해서 내려감.
        가상 방문은 이 함수 안에서만 쓰이고 트리에는 남지 않음.
        """
        virtual = Counter()
        chosen = []
        for _ in range(budget.m):
            leaf = self._descend(budget.c, virtual, set(chosen))
            if leaf is None:
                break
            chosen.append(leaf)
            for node_id in self.path(leaf):
                virtual[node_id] += 1
        return chosen

    def _descend(self, c, virtual, taken):
        node = self.root
        while not node.is_leaf:
            open_children = [k for k in node.children if self._has_open_leaf(k, taken)]
            if not open_children:
                return None
            parent_visits = node.visits + virtual[node.id]
            node = self.nodes[max(open_children, key=lambda k: self._rank(k, parent_visits, virtual, c))]
        return None if node.id in taken else node.id

    def _rank(self, node_id, parent_visits, virtual, c):
        node = self.nodes[node_id]
        visits = node.visits + virtual[node_id]
        mean = node.cumulative_reward / visits if visits else 0.0
        position = self.nodes[node.parent].children.index(node_id)
        # 동점이면 평균 보상이 높은 쪽, 그래도 같으면 먼저 추가된 쪽
        return ucb_value(node.cumulative_reward, visits, parent_visits, c), mean, -position

    def _has_open_leaf(self, node_id, taken):
        return any(node.is_leaf and node.id not in taken for node in self.walk(node_id))

    # Backpropagation / expansion (single writer)

    def backpropagate(self, node_id, reward):
        if reward < 0:
            raise ValueError(f'reward must be >= 0, got {reward}')
        with self._lock:
            for k in self.path(node_id):
                self.nodes[k].visits += 1
                self.nodes[k].cumulative_reward += reward

    def attach_children(self, parent_id, directives, epoch=0):
        if not directives:
            raise ValueError('attach_children needs at least one directive')
        with self._lock:
            parent = self.nodes[parent_id]
            existing = {self.nodes[k].directive for k in parent.children}
            for directive, _ in directives:
                if directive in existing:
                    raise DuplicateDirective(f'{directive!r} already exists under node {parent_id}')
                existing.add(directive)

            new_ids = []
            for directive, instructions in directives:
                node_id = len(self.nodes)
                self.nodes[node_id] = DirectiveNode(
                    id=node_id,
                    directive=directive,
                    instructions=instructions,
                    parent=parent_id,
                    created_epoch=epoch,
                )
                parent.children.append(node_id)
                new_ids.append(node_id)
        return new_ids

    # Export

    def render(self):
        lines = []

        def visit(node_id, depth):
            node = self.nodes[node_id]
            label = node.directive or '(root)'
            lines.append(f'{"  " * depth}- {label}  [N={node.visits} W={node.cumulative_reward:.4f}]')
            for child_id in node.children:
                visit(child_id, depth + 1)

        visit(ROOT_ID, 0)
        return '\n'.join(lines) + '\n'

    def snapshot_records(self):
        return [
            {
                'id': node.id,
                'parent': node.parent,
                'visits': node.visits,
                'reward': round(node.cumulative_reward, 9),
                'directive_digest': digest(node.directive),
                'directive': node.directive,
                'instructions': node.instructions,
                'created_epoch': node.created_epoch,
            }
            for node in sorted(self.nodes.values(), key=lambda n: n.id)
        ]
