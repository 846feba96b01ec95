// Renders one correction query: zoomed crop around the segment's bounding
// box, the segment-mask overlay, a star on the representative pixel, the
// instruction line, a one-click confirm, and a class palette for
// corrections. Keyboard: Enter confirms, digit keys pick a class.

import type { AnswerBody, QueryView } from './api.js'
import {
  QueryViewModel,
  canSelectClass,
  confirmAnswer,
  correctionAnswer,
  instructionText,
  newViewModel,
  selectClass,
} from './state.js'

export interface QueryScreen {
  element: HTMLElement
  model(): QueryViewModel
  dispose(): void
}

const ZOOM_FACTOR = 2

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag)
  if (className) node.className = className
  if (text !== undefined) node.textContent = text
  return node
}

function cropStyle(view: QueryView, zoomed: boolean): Partial<CSSStyleDeclaration> {
  if (!zoomed) return { transform: 'none' }
  const [x0, y0, x1, y1] = view.bbox
  const cx = (x0 + x1 + 1) / 2
  const cy = (y0 + y1 + 1) / 2
  return {
    transformOrigin: `${cx}px ${cy}px`,
    transform: `scale(${ZOOM_FACTOR})`,
  }
}

export function renderQuery(
  container: HTMLElement,
  view: QueryView,
  onAnswer: (body: AnswerBody) => void,
): QueryScreen {
  let vm = newViewModel(view)
  container.replaceChildren()

  const card = el('div', 'query-card')
  card.tabIndex = 0
  card.dataset.queryId = view.query_id

  card.appendChild(el('p', 'instruction', instructionText(vm)))

  const viewport = el('div', 'viewport')
  const stage = el('div', 'stage')
  const photo = el('img', 'photo') as HTMLImageElement
  photo.src = view.image_url
  photo.alt = `image ${view.image_id}`
  const overlay = el('img', 'overlay') as HTMLImageElement
  overlay.src = view.overlay_url
  overlay.alt = 'segment mask'

  const [x0, y0, x1, y1] = view.bbox
  const box = el('div', 'bbox')
  box.style.left = `${x0}px`
  box.style.top = `${y0}px`
  box.style.width = `${x1 - x0 + 1}px`
  box.style.height = `${y1 - y0 + 1}px`

  const star = el('div', 'star', '★')
  star.style.left = `${view.x}px`
  star.style.top = `${view.y}px`

  stage.append(photo, overlay, box, star)
  viewport.appendChild(stage)
  card.appendChild(viewport)

  const applyStage = () => {
    Object.assign(stage.style, cropStyle(view, vm.zoomed))
    overlay.style.display = vm.overlayVisible ? '' : 'none'
  }
  applyStage()

  const toggles = el('div', 'toggles')
  const overlayToggle = el('button', 'toggle-overlay', 'Toggle mask')
  overlayToggle.addEventListener('click', () => {
    vm = { ...vm, overlayVisible: !vm.overlayVisible }
    applyStage()
  })
  const zoomToggle = el('button', 'toggle-zoom', 'Full image')
  zoomToggle.addEventListener('click', () => {
    vm = { ...vm, zoomed: !vm.zoomed }
    zoomToggle.textContent = vm.zoomed ? 'Full image' : 'Zoom to segment'
    applyStage()
  })
  toggles.append(overlayToggle, zoomToggle)
  card.appendChild(toggles)

  const submit = (body: AnswerBody) => {
    if (vm.submission !== 'idle') return
    vm = { ...vm, submission: 'sending' }
    confirmButton.disabled = true
    palette.querySelectorAll('button').forEach((b) => (b.disabled = true))
    onAnswer(body)
  }

  const confirmButton = el('button', 'confirm', 'Correct ✓')
  confirmButton.title = 'The pseudo label is right (Enter)'
  confirmButton.addEventListener('click', () => submit(confirmAnswer(vm)))
  card.appendChild(confirmButton)

  const palette = el('div', 'palette')
  view.class_names.forEach((name, classId) => {
    const option = el('button', 'class-option', `${classId}: ${name}`)
    option.dataset.classId = String(classId)
    if (!canSelectClass(vm, classId)) {
      option.disabled = true
      option.title = 'This is the shown pseudo label; confirm it instead'
    } else {
      option.addEventListener('click', () => {
        vm = selectClass(vm, classId)
        const body = correctionAnswer(vm)
        if (body) submit(body)
      })
    }
    palette.appendChild(option)
  })
  card.appendChild(palette)

  const onKey = (event: KeyboardEvent) => {
    if (event.key === 'Enter') {
      submit(confirmAnswer(vm))
      return
    }
    if (/^[0-9]$/.test(event.key)) {
      const classId = Number(event.key)
      if (!canSelectClass(vm, classId)) return
      vm = selectClass(vm, classId)
      const body = correctionAnswer(vm)
      if (body) submit(body)
    }
  }
  card.addEventListener('keydown', onKey)

  container.appendChild(card)
  card.focus()

  return {
    element: card,
    model: () => vm,
    dispose: () => card.removeEventListener('keydown', onKey),
  }
}

export function renderRetry(container: HTMLElement, onRetry: () => void): void {
  container.replaceChildren()
  const card = el('div', 'query-card error')
  card.appendChild(el('p', 'error-text', 'Could not reach the annotation service.'))
  const retry = el('button', 'retry', 'Retry')
  retry.addEventListener('click', onRetry)
  card.appendChild(retry)
  container.appendChild(card)
}

export function renderIdle(container: HTMLElement, message: string): void {
  container.replaceChildren()
  const card = el('div', 'query-card idle')
  card.appendChild(el('p', 'idle-text', message))
  container.appendChild(card)
}
